#include "ddnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace ddnet {

namespace {

constexpr double kPi = 3.14159265358979323846;

void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    // splitmix64 over the combined stream id
    std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

struct Ellipse {
    double cu, cv;  // centre (row, col)
    double au, av;  // semi-axes (vertical, horizontal)

    bool contains(double u, double v) const {
        double du = (u - cu) / au, dv = (v - cv) / av;
        return du * du + dv * dv <= 1.0;
    }
};

bool inside_image(const Ellipse& e, int size, double margin) {
    return e.cu - e.au >= margin && e.cu + e.au <= size - margin &&
           e.cv - e.av >= margin && e.cv + e.av <= size - margin;
}

bool strictly_inside(const Ellipse& inner, const Ellipse& outer, double margin) {
    for (int k = 0; k < 64; ++k) {
        double t = 2.0 * kPi * k / 64;
        double u = inner.cu + inner.au * std::sin(t);
        double v = inner.cv + inner.av * std::cos(t);
        double du = (u - outer.cu) / (outer.au - margin);
        double dv = (v - outer.cv) / (outer.av - margin);
        if (du * du + dv * dv > 1.0) return false;
    }
    return true;
}

Sample render(const SynthParams& p, std::mt19937_64& rng, const Ellipse& disc,
              const Ellipse& cup, double cdr) {
    const int size = p.size;
    Sample s;
    s.image = Tensor({3, size, size});
    s.mask = SegMask(size, size);
    s.true_cdr = cdr;
    auto px = [&](int c, int i, int j) -> double& {
        return s.image.data()[(static_cast<std::size_t>(c) * size + i) * size + j];
    };
    for (int i = 0; i < size; ++i)
        for (int j = 0; j < size; ++j) {
            double tu = static_cast<double>(i) / size;
            double tv = static_cast<double>(j) / size;
            double r = 0.55 + 0.10 * tu, g = 0.25 + 0.05 * tv, b = 0.15;
            double u = i + 0.5, v = j + 0.5;
            if (cup.contains(u, v)) {
                r = 0.95; g = 0.75; b = 0.40;
                s.mask.at(i, j) = kCup;
            } else if (disc.contains(u, v)) {
                r = 0.85; g = 0.55; b = 0.30;
                s.mask.at(i, j) = kRim;
            }
            px(0, i, j) = r;
            px(1, i, j) = g;
            px(2, i, j) = b;
        }
    // dark vessel curves radiating outward from near the disc centre
    std::uniform_int_distribution<int> vcount(p.vessels_min, p.vessels_max);
    std::uniform_real_distribution<double> uang(0.0, 2.0 * kPi);
    std::uniform_real_distribution<double> ucurve(-0.08, 0.08);
    std::uniform_real_distribution<double> uwidth(0.8, 1.6);
    int nv = vcount(rng);
    for (int k = 0; k < nv; ++k) {
        double ang = uang(rng), width = uwidth(rng);
        double u = disc.cu, v = disc.cv;
        int steps = static_cast<int>(0.6 * size);
        for (int t = 0; t < steps; ++t) {
            ang += ucurve(rng);
            u += std::sin(ang);
            v += std::cos(ang);
            int lo_i = static_cast<int>(std::floor(u - width));
            int hi_i = static_cast<int>(std::ceil(u + width));
            for (int i = std::max(0, lo_i); i <= std::min(size - 1, hi_i); ++i)
                for (int j = std::max(0, static_cast<int>(std::floor(v - width)));
                     j <= std::min(size - 1, static_cast<int>(std::ceil(v + width))); ++j)
                    if (std::hypot(i + 0.5 - u, j + 0.5 - v) <= width)
                        for (int c = 0; c < 3; ++c) px(c, i, j) *= 0.55;
        }
    }
    std::normal_distribution<double> noise(0.0, p.noise_sigma);
    for (double& x : s.image.data())
        x = std::clamp(x + noise(rng), 0.0, 1.0);
    return s;
}

std::string read_token(std::istream& in) {
    // next whitespace-separated token, skipping '#' comment lines
    std::string tok;
    int ch;
    while ((ch = in.get()) != EOF) {
        if (ch == '#') {
            while ((ch = in.get()) != EOF && ch != '\n') {}
            continue;
        }
        if (std::isspace(ch)) {
            if (!tok.empty()) break;
            continue;
        }
        tok.push_back(static_cast<char>(ch));
    }
    return tok;
}

void parse_netpbm_header(std::istream& in, const std::string& path,
                         const std::string& magic, int* w, int* h) {
    std::string m = read_token(in);
    if (m != magic)
        throw std::runtime_error(path + ": expected " + magic + " header, got '" +
                                 m + "'");
    try {
        *w = std::stoi(read_token(in));
        *h = std::stoi(read_token(in));
        int maxval = std::stoi(read_token(in));
        if (maxval != 255)
            throw std::runtime_error(path + ": unsupported maxval " +
                                     std::to_string(maxval));
    } catch (const std::logic_error&) {
        throw std::runtime_error(path + ": malformed " + magic + " header");
    }
    if (*w <= 0 || *h <= 0) throw std::runtime_error(path + ": bad dimensions");
}

}  // namespace

std::vector<Sample> generate(const SynthParams& params, int count) {
    require(count >= 1, "generate: count must be >= 1");
    require(params.size >= 16, "generate: image size too small");
    std::vector<Sample> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int idx = 0; idx < count; ++idx) {
        bool done = false;
        for (int attempt = 0; attempt < 32 && !done; ++attempt) {
            std::mt19937_64 rng(
                mix(params.seed, static_cast<std::uint64_t>(idx) * 64 +
                                     static_cast<std::uint64_t>(attempt)));
            std::uniform_real_distribution<double> ujit(-1.0, 1.0);
            std::uniform_real_distribution<double> ufrac(params.disc_frac_min,
                                                         params.disc_frac_max);
            std::uniform_real_distribution<double> ucdr(params.cdr_min,
                                                        params.cdr_max);
            const double size = params.size;
            Ellipse disc;
            disc.cu = size / 2 + ujit(rng) * params.center_jitter * size;
            disc.cv = size / 2 + ujit(rng) * params.center_jitter * size;
            double rd = ufrac(rng) * size;
            disc.au = rd * (1.0 + ujit(rng) * params.ecc_jitter);
            disc.av = rd * (1.0 + ujit(rng) * params.ecc_jitter);
            double cdr = ucdr(rng);
            Ellipse cup;
            cup.au = cdr * disc.au;  // vertical diameters give CDR exactly
            cup.av = cdr * disc.av * (1.0 + ujit(rng) * params.ecc_jitter);
            cup.cu = disc.cu + ujit(rng) * 0.05 * rd;
            cup.cv = disc.cv + ujit(rng) * 0.05 * rd;
            if (!inside_image(disc, params.size, 2.0)) continue;
            if (!strictly_inside(cup, disc, 1.0)) continue;
            out.push_back(render(params, rng, disc, cup, cdr));
            done = true;
        }
        if (!done)
            throw std::runtime_error("generate: no feasible geometry for item " +
                                     std::to_string(idx));
    }
    return out;
}

Sample augment(const Sample& s, std::mt19937_64& rng) {
    bool flip = std::bernoulli_distribution(0.5)(rng);
    double factor = std::uniform_real_distribution<double>(0.9, 1.1)(rng);
    return augment_with(s, flip, factor);
}

Sample augment_with(const Sample& s, bool flip, double factor) {
    require(s.image.rank() == 3 && s.image.dim(0) == 3, "augment: bad image");
    require(factor > 0, "augment: non-positive scale factor");
    const int H = s.image.dim(1), W = s.image.dim(2);
    require(s.mask.h == H && s.mask.w == W, "augment: image/mask size mismatch");

    auto src_img = [&](int c, int i, int j) {
        int jj = flip ? W - 1 - j : j;
        return s.image.data()[(static_cast<std::size_t>(c) * H + i) * W + jj];
    };
    auto src_lab = [&](int i, int j) { return s.mask.at(i, flip ? W - 1 - j : j); };

    Sample out;
    out.image = Tensor({3, H, W});
    out.mask = SegMask(H, W);
    out.true_cdr = s.true_cdr;
    const double cu = (H - 1) / 2.0, cv = (W - 1) / 2.0;
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) {
            double u = cu + (i - cu) / factor, v = cv + (j - cv) / factor;
            // image: bilinear with edge clamp
            double uc = std::clamp(u, 0.0, H - 1.0), vc = std::clamp(v, 0.0, W - 1.0);
            int i0 = std::min(static_cast<int>(uc), H - 2 >= 0 ? H - 2 : 0);
            int j0 = std::min(static_cast<int>(vc), W - 2 >= 0 ? W - 2 : 0);
            double fu = uc - i0, fv = vc - j0;
            for (int c = 0; c < 3; ++c) {
                double v00 = src_img(c, i0, j0), v01 = src_img(c, i0, j0 + 1);
                double v10 = src_img(c, i0 + 1, j0), v11 = src_img(c, i0 + 1, j0 + 1);
                out.image.data()[(static_cast<std::size_t>(c) * H + i) * W + j] =
                    (1 - fu) * ((1 - fv) * v00 + fv * v01) +
                    fu * ((1 - fv) * v10 + fv * v11);
            }
            // mask: nearest, background outside
            int ni = static_cast<int>(std::lround(u)), nj = static_cast<int>(std::lround(v));
            out.mask.at(i, j) = (ni >= 0 && ni < H && nj >= 0 && nj < W)
                                    ? src_lab(ni, nj)
                                    : kBackground;
        }
    return out;
}

Sample crop_od_window(const Sample& s, int window) {
    const int H = s.mask.h, W = s.mask.w;
    require(window >= 1 && window <= H && window <= W,
            "crop_od_window: window larger than image");
    double sr = 0, sc = 0;
    std::size_t count = 0;
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j)
            if (s.mask.at(i, j) != kBackground) {
                sr += i;
                sc += j;
                ++count;
            }
    require(count > 0, "crop_od_window: empty disc mask");
    int top = static_cast<int>(std::lround(sr / static_cast<double>(count))) - window / 2;
    int left = static_cast<int>(std::lround(sc / static_cast<double>(count))) - window / 2;
    top = std::clamp(top, 0, H - window);
    left = std::clamp(left, 0, W - window);
    Sample out;
    out.image = Tensor({3, window, window});
    out.mask = SegMask(window, window);
    out.true_cdr = s.true_cdr;
    for (int i = 0; i < window; ++i)
        for (int j = 0; j < window; ++j) {
            out.mask.at(i, j) = s.mask.at(top + i, left + j);
            for (int c = 0; c < 3; ++c)
                out.image.data()[(static_cast<std::size_t>(c) * window + i) * window + j] =
                    s.image.data()[(static_cast<std::size_t>(c) * H + top + i) * W + left + j];
        }
    return out;
}

void save_ppm(const std::string& path, const Tensor& image) {
    require(image.rank() == 3 && image.dim(0) == 3, "save_ppm: expected [3,H,W]");
    const int H = image.dim(1), W = image.dim(2);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_ppm: cannot open " + path);
    out << "P6\n" << W << " " << H << "\n255\n";
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    for (std::size_t i = 0; i < plane; ++i)
        for (int c = 0; c < 3; ++c) {
            double v = std::clamp(image.data()[static_cast<std::size_t>(c) * plane + i], 0.0, 1.0);
            out.put(static_cast<char>(std::lround(v * 255.0)));
        }
    if (!out) throw std::runtime_error("save_ppm: write failed for " + path);
}

Tensor load_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_ppm: cannot open " + path);
    int w = 0, h = 0;
    parse_netpbm_header(in, path, "P6", &w, &h);
    Tensor img({3, h, w});
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    std::vector<char> buf(plane * 3);
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() != static_cast<std::streamsize>(buf.size()))
        throw std::runtime_error("load_ppm: truncated payload in " + path);
    for (std::size_t i = 0; i < plane; ++i)
        for (int c = 0; c < 3; ++c)
            img.data()[static_cast<std::size_t>(c) * plane + i] =
                static_cast<unsigned char>(buf[i * 3 + static_cast<std::size_t>(c)]) / 255.0;
    return img;
}

void save_pgm_mask(const std::string& path, const SegMask& mask) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_pgm_mask: cannot open " + path);
    out << "P5\n" << mask.w << " " << mask.h << "\n255\n";
    static constexpr unsigned char gray[3] = {0, 127, 255};
    for (std::uint8_t v : mask.labels) {
        if (v > 2)
            throw std::invalid_argument("save_pgm_mask: label outside {0,1,2}");
        out.put(static_cast<char>(gray[v]));
    }
    if (!out) throw std::runtime_error("save_pgm_mask: write failed for " + path);
}

SegMask load_pgm_mask(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_pgm_mask: cannot open " + path);
    int w = 0, h = 0;
    parse_netpbm_header(in, path, "P5", &w, &h);
    SegMask mask(h, w);
    std::streamoff payload = in.tellg();
    for (std::size_t i = 0; i < mask.labels.size(); ++i) {
        int ch = in.get();
        if (ch == EOF)
            throw std::runtime_error("load_pgm_mask: truncated payload in " + path);
        switch (ch) {
            case 0: mask.labels[i] = 0; break;
            case 127: mask.labels[i] = 1; break;
            case 255: mask.labels[i] = 2; break;
            default:
                throw std::runtime_error(
                    "load_pgm_mask: invalid gray value " + std::to_string(ch) +
                    " at byte offset " +
                    std::to_string(payload + static_cast<std::streamoff>(i)) +
                    " in " + path);
        }
    }
    return mask;
}

void write_manifest(const std::string& path,
                    const std::vector<ManifestEntry>& entries) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_manifest: cannot open " + path);
    out << "filename,seed,true_cdr\n";
    char buf[32];
    for (const auto& e : entries) {
        std::snprintf(buf, sizeof buf, "%.17g", e.true_cdr);
        out << e.filename << "," << e.seed << "," << buf << "\n";
    }
}

std::vector<ManifestEntry> read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("read_manifest: cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line != "filename,seed,true_cdr")
        throw std::runtime_error("read_manifest: bad header in " + path);
    std::vector<ManifestEntry> out;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ss(line);
        ManifestEntry e;
        std::string seed, cdr;
        if (!std::getline(ss, e.filename, ',') || !std::getline(ss, seed, ',') ||
            !std::getline(ss, cdr))
            throw std::runtime_error("read_manifest: malformed line " +
                                     std::to_string(lineno) + " in " + path);
        try {
            e.seed = std::stoull(seed);
            e.true_cdr = std::stod(cdr);
        } catch (const std::logic_error&) {
            throw std::runtime_error("read_manifest: malformed line " +
                                     std::to_string(lineno) + " in " + path);
        }
        out.push_back(std::move(e));
    }
    return out;
}

}  // namespace ddnet
