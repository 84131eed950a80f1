#include "ddnet/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace ddnet {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

int parse_int(const std::string& v) {
    std::size_t pos = 0;
    int x = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing characters");
    return x;
}

double parse_double(const std::string& v) {
    std::size_t pos = 0;
    double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing characters");
    return x;
}

std::uint64_t parse_u64(const std::string& v) {
    std::size_t pos = 0;
    std::uint64_t x = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing characters");
    return x;
}

bool parse_bool(const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw std::invalid_argument("expected true/false");
}

std::vector<int> parse_int_list(const std::string& v) {
    std::vector<int> out;
    std::istringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ','))
        out.push_back(parse_int(trim(item)));
    if (out.empty()) throw std::invalid_argument("empty list");
    return out;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
    try {
        if (key == "channels") channels = parse_int_list(value);
        else if (key == "convs_per_stage") convs_per_stage = parse_int(value);
        else if (key == "size") size = parse_int(value);
        else if (key == "train_count") train_count = parse_int(value);
        else if (key == "test_count") test_count = parse_int(value);
        else if (key == "train_seed") train_seed = parse_u64(value);
        else if (key == "test_seed") test_seed = parse_u64(value);
        else if (key == "batch") batch = parse_int(value);
        else if (key == "lr_a") lr_a = parse_double(value);
        else if (key == "lr_b") lr_b = parse_double(value);
        else if (key == "iterations_a") iterations_a = parse_int(value);
        else if (key == "iterations_b") iterations_b = parse_int(value);
        else if (key == "momentum") momentum = parse_double(value);
        else if (key == "weight_decay") weight_decay = parse_double(value);
        else if (key == "seed") seed = parse_u64(value);
        else if (key == "augment") augment = parse_bool(value);
        else throw std::invalid_argument("unknown key '" + key + "'");
    } catch (const std::invalid_argument& e) {
        std::string what = e.what();
        if (what.rfind("unknown key", 0) == 0) throw;
        throw std::invalid_argument("bad value for '" + key + "': " + what);
    } catch (const std::out_of_range&) {
        throw std::invalid_argument("value out of range for '" + key + "'");
    }
}

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    RunConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument(path + ":" + std::to_string(lineno) +
                                        ": expected key=value");
        try {
            cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        } catch (const std::invalid_argument& e) {
            throw std::invalid_argument(path + ":" + std::to_string(lineno) +
                                        ": " + e.what());
        }
    }
    return cfg;
}

std::string RunConfig::resolved() const {
    std::ostringstream out;
    out << "channels=";
    for (std::size_t i = 0; i < channels.size(); ++i)
        out << (i ? "," : "") << channels[i];
    out << "\nconvs_per_stage=" << convs_per_stage;
    out << "\nsize=" << size;
    out << "\ntrain_count=" << train_count << "\ntest_count=" << test_count;
    out << "\ntrain_seed=" << train_seed << "\ntest_seed=" << test_seed;
    out << "\nbatch=" << batch;
    out << "\nlr_a=" << lr_a << "\nlr_b=" << lr_b;
    out << "\niterations_a=" << iterations_a
        << "\niterations_b=" << iterations_b;
    out << "\nmomentum=" << momentum << "\nweight_decay=" << weight_decay;
    out << "\nseed=" << seed;
    out << "\naugment=" << (augment ? "true" : "false") << "\n";
    return out.str();
}

}  // namespace ddnet
