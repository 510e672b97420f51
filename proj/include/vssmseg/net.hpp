#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "vssmseg/model_config.hpp"
#include "vssmseg/ops.hpp"
#include "vssmseg/rng.hpp"
#include "vssmseg/sdi.hpp"
#include "vssmseg/ss2d.hpp"
#include "vssmseg/ssm.hpp"
#include "vssmseg/tensor.hpp"
#include "vssmseg/vss_block.hpp"

namespace vssmseg::net {

// Full segmentation model: patch embedding, four VSS encoder stages with
// strided-conv merges, SDI fusion, and a decoder with bilinear upsampling and
// one or two full-resolution logit heads.
template <typename T>
class Model {
public:
    Model(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
        cfg_.validate();
        Rng rng(Rng::mix(seed, 0x6d6f64656cULL));
        build(rng);
    }

    const ModelConfig& config() const { return cfg_; }

    // Attach every parameter to a tape as a leaf (or detach with nullptr).
    void bind(Tape<T>* tape) {
        for (auto& [name, p] : registry_) {
            if (tape)
                tape->watch(*p);
            else
                p->detach();
        }
    }

    std::vector<std::pair<std::string, Tensor<T>*>>& params() { return registry_; }
    const std::vector<std::pair<std::string, Tensor<T>*>>& params() const { return registry_; }

    std::vector<std::pair<std::string, Tensor<T>>> named_params() const {
        std::vector<std::pair<std::string, Tensor<T>>> out;
        out.reserve(registry_.size());
        for (const auto& [name, p] : registry_) out.emplace_back(name, *p);
        return out;
    }

    // Copies values from (name, tensor) entries into the model parameters.
    void load_named(const std::vector<std::pair<std::string, Tensor<T>>>& entries) {
        std::map<std::string, const Tensor<T>*> by_name;
        for (const auto& [name, t] : entries) by_name[name] = &t;
        for (auto& [name, p] : registry_) {
            auto it = by_name.find(name);
            if (it == by_name.end()) throw IoError("checkpoint is missing parameter " + name);
            if (it->second->shape() != p->shape())
                throw IoError("checkpoint parameter " + name + " has shape " +
                              shape_str(it->second->shape()) + ", expected " +
                              shape_str(p->shape()));
            std::copy(it->second->vec().begin(), it->second->vec().end(), p->data());
            by_name.erase(it);
        }
        if (!by_name.empty())
            throw IoError("checkpoint has unknown parameter " + by_name.begin()->first);
    }

    sdi::FeaturePyramid<T> encode(const Tensor<T>& x) const {
        check_input(x);
        Tensor<T> t = ops::conv2d(x, embed_w_, std::optional<Tensor<T>>(embed_b_), 4, 0, 1);
        sdi::FeaturePyramid<T> pyr;
        pyr.levels.reserve(4);
        for (int s = 0; s < 4; ++s) {
            if (s > 0)
                t = ops::conv2d(t, down_w_[static_cast<size_t>(s - 1)],
                                std::optional<Tensor<T>>(down_b_[static_cast<size_t>(s - 1)]), 2, 0, 1);
            Tensor<T> h = ops::permute(t, {0, 2, 3, 1});  // [B,H,W,C]
            for (const auto& block : stages_[static_cast<size_t>(s)]) h = vss::vss_forward(h, block);
            t = ops::permute(h, {0, 3, 1, 2});
            pyr.levels.push_back(t);
        }
        return pyr;
    }

    sdi::FeaturePyramid<T> fuse(const sdi::FeaturePyramid<T>& pyr) const {
        return sdi::sdi_forward(pyr, sdi_);
    }

    // Decoder over the SDI outputs. Index 0 of the result is the main
    // full-resolution logits map; with deep supervision a second head taps
    // the previous decoder stage.
    std::vector<Tensor<T>> decode(const sdi::FeaturePyramid<T>& f5) const {
        if (f5.levels.size() != 4)
            throw ShapeError("decode: expected 4 levels, got " + std::to_string(f5.levels.size()));
        for (const auto& l : f5.levels)
            if (l.dim(1) != cfg_.sdi_channels)
                throw ShapeError("decode: level width " + std::to_string(l.dim(1)) +
                                 " != sdi channels " + std::to_string(cfg_.sdi_channels));
        Tensor<T> x = f5.levels[3];
        Tensor<T> penultimate;
        for (int step = 0; step < 3; ++step) {
            const Tensor<T>& skip = f5.levels[static_cast<size_t>(2 - step)];
            x = ops::bilinear_resize(x, skip.dim(2), skip.dim(3));
            x = ops::add(x, skip);
            x = ops::silu(ops::conv2d(x, dec_w_[static_cast<size_t>(step)],
                                      std::optional<Tensor<T>>(dec_b_[static_cast<size_t>(step)]), 1, 1, 1));
            if (step == 1) penultimate = x;
        }
        std::vector<Tensor<T>> heads;
        Tensor<T> logits = ops::conv2d(x, head_w_, std::optional<Tensor<T>>(head_b_), 1, 0, 1);
        heads.push_back(ops::bilinear_resize(logits, cfg_.input_h, cfg_.input_w));
        if (cfg_.deep_supervision) {
            Tensor<T> aux = ops::conv2d(penultimate, aux_w_, std::optional<Tensor<T>>(aux_b_), 1, 0, 1);
            heads.push_back(ops::bilinear_resize(aux, cfg_.input_h, cfg_.input_w));
        }
        return heads;
    }

    std::vector<Tensor<T>> forward(const Tensor<T>& x) const { return decode(fuse(encode(x))); }

private:
    void check_input(const Tensor<T>& x) const {
        if (x.rank() != 4 || x.dim(1) != 3 || x.dim(2) != cfg_.input_h || x.dim(3) != cfg_.input_w)
            throw ShapeError("forward: expected input [B,3," + std::to_string(cfg_.input_h) + "," +
                             std::to_string(cfg_.input_w) + "], got " + shape_str(x.shape()));
    }

    void reg(std::string name, Tensor<T>& t) { registry_.emplace_back(std::move(name), &t); }

    Tensor<T> uniform_init(Rng& rng, Shape shape, int64_t fan_in) {
        double bound = 1.0 / std::sqrt(static_cast<double>(fan_in > 0 ? fan_in : 1));
        Tensor<T> t = Tensor<T>::zeros(std::move(shape));
        for (int64_t i = 0; i < t.numel(); ++i)
            t.data()[i] = static_cast<T>(rng.uniform(-bound, bound));
        return t;
    }

    void make_linear(Rng& rng, const std::string& name, int64_t din, int64_t dout, Tensor<T>& w,
                     Tensor<T>& b) {
        w = uniform_init(rng, Shape{din, dout}, din);
        b = Tensor<T>::zeros(Shape{dout});
        reg(name + ".w", w);
        reg(name + ".b", b);
    }

    void make_conv(Rng& rng, const std::string& name, int64_t cout, int64_t cin_g, int64_t kh,
                   int64_t kw, Tensor<T>& w, Tensor<T>& b) {
        w = uniform_init(rng, Shape{cout, cin_g, kh, kw}, cin_g * kh * kw);
        b = Tensor<T>::zeros(Shape{cout});
        reg(name + ".w", w);
        reg(name + ".b", b);
    }

    void make_scan_dir(Rng& rng, const std::string& name, int64_t D, int64_t N, int64_t R,
                       ssm::SelectiveScanWeights<T>& s) {
        s.a_log = Tensor<T>::zeros(Shape{D, N});
        for (int64_t d = 0; d < D; ++d)
            for (int64_t n = 0; n < N; ++n)
                s.a_log.data()[d * N + n] = static_cast<T>(std::log(static_cast<double>(n + 1)));
        s.d_skip = Tensor<T>::full(Shape{D}, T(1));
        s.w_dt_in = uniform_init(rng, Shape{D, R}, D);
        s.w_dt_out = uniform_init(rng, Shape{R, D}, R);
        s.b_dt = Tensor<T>::zeros(Shape{D});
        for (int64_t d = 0; d < D; ++d) {
            double dt = std::exp(rng.uniform(std::log(1e-3), std::log(1e-1)));
            if (dt < 1e-4) dt = 1e-4;
            s.b_dt.data()[d] = static_cast<T>(std::log(std::expm1(dt)));  // inverse softplus
        }
        s.w_b = uniform_init(rng, Shape{D, N}, D);
        s.b_b = Tensor<T>::zeros(Shape{N});
        s.w_c = uniform_init(rng, Shape{D, N}, D);
        s.b_c = Tensor<T>::zeros(Shape{N});
        reg(name + ".a_log", s.a_log);
        reg(name + ".d_skip", s.d_skip);
        reg(name + ".w_dt_in", s.w_dt_in);
        reg(name + ".w_dt_out", s.w_dt_out);
        reg(name + ".b_dt", s.b_dt);
        reg(name + ".w_b", s.w_b);
        reg(name + ".b_b", s.b_b);
        reg(name + ".w_c", s.w_c);
        reg(name + ".b_c", s.b_c);
    }

    void make_block(Rng& rng, const std::string& name, int stage, vss::VssBlockParams<T>& p) {
        int64_t C = cfg_.stage_channels(stage);
        int64_t D = cfg_.inner_dim(stage);
        int64_t R = cfg_.dt_rank(stage);
        int64_t N = cfg_.state_dim;
        make_linear(rng, name + ".in_proj", C, D, p.in_w, p.in_b);
        make_linear(rng, name + ".gate", C, D, p.gate_w, p.gate_b);
        make_conv(rng, name + ".dwconv", D, 1, 3, 3, p.dw_w, p.dw_b);
        for (int d = 0; d < 4; ++d)
            make_scan_dir(rng, name + ".scan.dir" + std::to_string(d), D, N, R,
                          p.scan.dir[static_cast<size_t>(d)]);
        p.norm_gamma = Tensor<T>::full(Shape{D}, T(1));
        p.norm_beta = Tensor<T>::zeros(Shape{D});
        reg(name + ".norm.gamma", p.norm_gamma);
        reg(name + ".norm.beta", p.norm_beta);
        make_linear(rng, name + ".out_proj", D, C, p.out_w, p.out_b);
    }

    void build(Rng& rng) {
        make_conv(rng, "embed", cfg_.stage_channels(0), 3, 4, 4, embed_w_, embed_b_);
        for (int s = 0; s < 4; ++s) {
            if (s > 0)
                make_conv(rng, "down" + std::to_string(s), cfg_.stage_channels(s),
                          cfg_.stage_channels(s - 1), 2, 2, down_w_[static_cast<size_t>(s - 1)],
                          down_b_[static_cast<size_t>(s - 1)]);
            stages_[static_cast<size_t>(s)].resize(static_cast<size_t>(cfg_.depths[static_cast<size_t>(s)]));
            for (int b = 0; b < cfg_.depths[static_cast<size_t>(s)]; ++b)
                make_block(rng, "enc" + std::to_string(s + 1) + ".block" + std::to_string(b), s,
                           stages_[static_cast<size_t>(s)][static_cast<size_t>(b)]);
        }
        int64_t c = cfg_.sdi_channels;
        for (int lvl = 0; lvl < 4; ++lvl) {
            int64_t C = cfg_.stage_channels(lvl);
            int64_t hidden = cfg_.cbam_hidden(lvl);
            auto& a = sdi_.attn[static_cast<size_t>(lvl)];
            std::string base = "sdi.attn" + std::to_string(lvl + 1);
            make_linear(rng, base + ".mlp1", C, hidden, a.mlp1_w, a.mlp1_b);
            make_linear(rng, base + ".mlp2", hidden, C, a.mlp2_w, a.mlp2_b);
            make_conv(rng, base + ".spatial", 1, 2, 7, 7, a.sp_w, a.sp_b);
            make_conv(rng, "sdi.align" + std::to_string(lvl + 1), c, C, 1, 1,
                      sdi_.align_w[static_cast<size_t>(lvl)], sdi_.align_b[static_cast<size_t>(lvl)]);
        }
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j)
                make_conv(rng, "sdi.smooth" + std::to_string(i + 1) + std::to_string(j + 1), c, c, 3,
                          3, sdi_.smooth_w[static_cast<size_t>(i)][static_cast<size_t>(j)],
                          sdi_.smooth_b[static_cast<size_t>(i)][static_cast<size_t>(j)]);
        for (int s = 0; s < 3; ++s)
            make_conv(rng, "dec.stage" + std::to_string(s) + ".conv", c, c, 3, 3,
                      dec_w_[static_cast<size_t>(s)], dec_b_[static_cast<size_t>(s)]);
        make_conv(rng, "dec.head", cfg_.num_classes, c, 1, 1, head_w_, head_b_);
        if (cfg_.deep_supervision)
            make_conv(rng, "dec.aux_head", cfg_.num_classes, c, 1, 1, aux_w_, aux_b_);
    }

    ModelConfig cfg_;
    Tensor<T> embed_w_, embed_b_;
    std::array<std::vector<vss::VssBlockParams<T>>, 4> stages_;
    std::array<Tensor<T>, 3> down_w_, down_b_;
    sdi::SdiParams<T> sdi_;
    std::array<Tensor<T>, 3> dec_w_, dec_b_;
    Tensor<T> head_w_, head_b_;
    Tensor<T> aux_w_, aux_b_;
    std::vector<std::pair<std::string, Tensor<T>*>> registry_;
};

// Exact sum of trainable element counts.
template <typename T>
int64_t count_params(const Model<T>& m) {
    int64_t n = 0;
    for (const auto& [name, p] : m.params()) n += p->numel();
    return n;
}

}  // namespace vssmseg::net
