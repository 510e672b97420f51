#include "vssmseg/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "vssmseg/serialize.hpp"

namespace vssmseg::data {

namespace {

struct Ellipse {
    double cx, cy, a, b, cos_t, sin_t, intensity;
};

bool inside(const Ellipse& e, double px, double py) {
    double dx = px - e.cx, dy = py - e.cy;
    double u = (dx * e.cos_t + dy * e.sin_t) / e.a;
    double v = (-dx * e.sin_t + dy * e.cos_t) / e.b;
    return u * u + v * v <= 1.0;
}

float clamp01(double v) { return static_cast<float>(v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v)); }

// Coarse value-noise grid, bilinearly interpolated over the image.
struct ValueNoise {
    int grid;
    std::vector<double> values;  // (grid+1)^2
    ValueNoise(Rng& rng, int g) : grid(g), values(static_cast<size_t>((g + 1) * (g + 1))) {
        for (auto& v : values) v = rng.uniform(-1.0, 1.0);
    }
    double at(double fx, double fy) const {  // fx, fy in [0,1]
        double gx = fx * grid, gy = fy * grid;
        int x0 = std::min(static_cast<int>(gx), grid - 1);
        int y0 = std::min(static_cast<int>(gy), grid - 1);
        double tx = gx - x0, ty = gy - y0;
        auto v = [&](int y, int x) { return values[static_cast<size_t>(y * (grid + 1) + x)]; };
        double top = v(y0, x0) + (v(y0, x0 + 1) - v(y0, x0)) * tx;
        double bot = v(y0 + 1, x0) + (v(y0 + 1, x0 + 1) - v(y0 + 1, x0)) * tx;
        return top + (bot - top) * ty;
    }
};

SyntheticSample make_sample(int64_t h, int64_t w, uint64_t sample_seed) {
    Rng rng(sample_seed);
    double base = rng.uniform(0.15, 0.40);
    double texture_amp = rng.uniform(0.03, 0.08);
    ValueNoise noise(rng, 8);
    double chan_off[3];
    for (double& c : chan_off) c = rng.uniform(-0.02, 0.02);

    // Redraw the ellipse set until the foreground fraction lands in bounds.
    std::vector<Ellipse> ellipses;
    std::vector<float> mask(static_cast<size_t>(h * w));
    double minhw = static_cast<double>(std::min(h, w));
    for (int attempt = 0;; ++attempt) {
        ellipses.clear();
        int count = 1 + static_cast<int>(rng.uniform_int(3));
        for (int e = 0; e < count; ++e) {
            Ellipse el;
            el.cx = rng.uniform(0.25, 0.75) * static_cast<double>(w);
            el.cy = rng.uniform(0.25, 0.75) * static_cast<double>(h);
            el.a = rng.uniform(0.08, 0.25) * minhw;
            el.b = rng.uniform(0.08, 0.25) * minhw;
            double t = rng.uniform(0.0, 3.14159265358979323846);
            el.cos_t = std::cos(t);
            el.sin_t = std::sin(t);
            el.intensity = rng.uniform(0.65, 0.95);
            ellipses.push_back(el);
        }
        int64_t fg = 0;
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
                double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
                bool in = false;
                for (const auto& el : ellipses)
                    if (inside(el, px, py)) {
                        in = true;
                        break;
                    }
                mask[static_cast<size_t>(y * w + x)] = in ? 1.0f : 0.0f;
                fg += in;
            }
        double frac = static_cast<double>(fg) / static_cast<double>(h * w);
        if (frac >= 0.02 && frac <= 0.6) break;
        if (attempt >= 100) {  // deterministic fallback: one centered disc
            Ellipse el{static_cast<double>(w) / 2, static_cast<double>(h) / 2, 0.2 * minhw,
                       0.2 * minhw, 1.0, 0.0, 0.8};
            ellipses.assign(1, el);
            for (int64_t y = 0; y < h; ++y)
                for (int64_t x = 0; x < w; ++x)
                    mask[static_cast<size_t>(y * w + x)] =
                        inside(el, x + 0.5, y + 0.5) ? 1.0f : 0.0f;
            break;
        }
    }

    std::vector<float> image(static_cast<size_t>(3 * h * w));
    for (int64_t y = 0; y < h; ++y) {
        for (int64_t x = 0; x < w; ++x) {
            double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
            double tex = noise.at((px) / static_cast<double>(w), (py) / static_cast<double>(h));
            double value;
            const Ellipse* hit = nullptr;
            for (const auto& el : ellipses)
                if (inside(el, px, py)) {
                    hit = &el;
                    break;
                }
            if (hit)
                value = hit->intensity + 0.3 * texture_amp * tex;
            else
                value = base + texture_amp * tex;
            value += rng.uniform(-0.02, 0.02);
            for (int c = 0; c < 3; ++c)
                image[static_cast<size_t>((c * h + y) * w + x)] = clamp01(value + chan_off[c]);
        }
    }
    SyntheticSample s;
    s.image = Tensor<float>(Shape{3, h, w}, std::move(image));
    s.mask = Tensor<float>(Shape{1, h, w}, std::move(mask));
    return s;
}

// One clockwise quarter turn: [C,H,W] -> [C,W,H].
Tensor<float> rot90_once(const Tensor<float>& t) {
    int64_t C = t.dim(0), H = t.dim(1), W = t.dim(2);
    std::vector<float> out(static_cast<size_t>(C * W * H));
    for (int64_t c = 0; c < C; ++c)
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W; ++x)
                out[static_cast<size_t>((c * W + x) * H + (H - 1 - y))] =
                    t.vec()[static_cast<size_t>((c * H + y) * W + x)];
    return Tensor<float>(Shape{C, W, H}, std::move(out));
}

Tensor<float> flip(const Tensor<float>& t, bool horizontal) {
    int64_t C = t.dim(0), H = t.dim(1), W = t.dim(2);
    std::vector<float> out(t.vec().size());
    for (int64_t c = 0; c < C; ++c)
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W; ++x) {
                int64_t sy = horizontal ? y : H - 1 - y;
                int64_t sx = horizontal ? W - 1 - x : x;
                out[static_cast<size_t>((c * H + y) * W + x)] =
                    t.vec()[static_cast<size_t>((c * H + sy) * W + sx)];
            }
    return Tensor<float>(t.shape(), std::move(out));
}

}  // namespace

Dataset gen_synthetic(int64_t n, int64_t h, int64_t w, uint64_t seed) {
    if (n < 0) throw ValueError("gen_synthetic: n must be >= 0");
    if (h % 32 != 0 || w % 32 != 0 || h < 32 || w < 32)
        throw ValueError("gen_synthetic: size must be divisible by 32");
    Dataset ds;
    ds.reserve(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i)
        ds.push_back(make_sample(h, w, Rng::mix(seed, 0x5a17 + static_cast<uint64_t>(i))));
    return ds;
}

SyntheticSample augment_apply(const SyntheticSample& s, bool hflip, bool vflip, int rot90_k) {
    SyntheticSample out = s;
    if (hflip) {
        out.image = flip(out.image, true);
        out.mask = flip(out.mask, true);
    }
    if (vflip) {
        out.image = flip(out.image, false);
        out.mask = flip(out.mask, false);
    }
    for (int k = 0; k < ((rot90_k % 4) + 4) % 4; ++k) {
        out.image = rot90_once(out.image);
        out.mask = rot90_once(out.mask);
    }
    return out;
}

SyntheticSample augment(const SyntheticSample& s, Rng& rng) {
    bool hf = rng.coin();
    bool vf = rng.coin();
    int k = static_cast<int>(rng.uniform_int(4));
    return augment_apply(s, hf, vf, k);
}

void save_dataset(const std::string& dir, const Dataset& ds, uint64_t seed) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::ofstream idx(dir + "/index.txt");
    if (!idx) throw IoError("cannot write " + dir + "/index.txt");
    int64_t h = ds.empty() ? 0 : ds[0].image.dim(1);
    int64_t w = ds.empty() ? 0 : ds[0].image.dim(2);
    idx << "vssmseg-dataset v1\n";
    idx << "n=" << ds.size() << "\n";
    idx << "height=" << h << "\n";
    idx << "width=" << w << "\n";
    idx << "seed=" << seed << "\n";
    char name[64];
    for (size_t i = 0; i < ds.size(); ++i) {
        std::snprintf(name, sizeof(name), "%05zu", i);
        io::save_vtns_file(dir + "/" + name + "_img.vtns", ds[i].image);
        io::save_vtns_file(dir + "/" + name + "_mask.vtns", ds[i].mask);
        idx << name << "\n";
    }
    if (!idx) throw IoError("failed writing " + dir + "/index.txt");
}

Dataset load_dataset(const std::string& dir) {
    std::ifstream idx(dir + "/index.txt");
    if (!idx) throw IoError("cannot open " + dir + "/index.txt");
    std::string line;
    if (!std::getline(idx, line) || line != "vssmseg-dataset v1")
        throw IoError("unrecognized dataset index header in " + dir);
    int64_t n = -1;
    for (int i = 0; i < 4; ++i) {
        if (!std::getline(idx, line)) throw IoError("truncated dataset index in " + dir);
        if (line.rfind("n=", 0) == 0) n = std::stoll(line.substr(2));
    }
    if (n < 0) throw IoError("dataset index missing n= in " + dir);
    Dataset ds;
    ds.reserve(static_cast<size_t>(n));
    while (std::getline(idx, line)) {
        if (line.empty()) continue;
        SyntheticSample s;
        s.image = io::load_vtns_file<float>(dir + "/" + line + "_img.vtns");
        s.mask = io::load_vtns_file<float>(dir + "/" + line + "_mask.vtns");
        ds.push_back(std::move(s));
    }
    if (static_cast<int64_t>(ds.size()) != n)
        throw IoError("dataset index lists " + std::to_string(n) + " samples, found " +
                      std::to_string(ds.size()));
    return ds;
}

}  // namespace vssmseg::data
