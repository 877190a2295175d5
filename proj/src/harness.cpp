#include "mmk/harness.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <stdexcept>

namespace mmk {

namespace {

ConvWeights conv_init(std::int64_t c_out, std::int64_t c_in, std::int64_t k, SplitMix64& rng) {
    ConvWeights w;
    w.kernel = Tensor({c_out, c_in, k, k});
    const double s = 1.0 / std::sqrt(static_cast<double>(c_in * k * k));
    for (auto& v : w.kernel.data()) v = rng.sym(s);
    w.bias = Tensor({c_out});
    return w;
}

}  // namespace

EncoderModel make_default_model(const HarnessConfig& cfg) {
    SplitMix64 rng(cfg.seed);
    EncoderModel m;
    m.config = cfg;

    m.backbone.stem1 = conv_init(cfg.stem_channels, 3, 3, rng);
    m.backbone.stem2 = conv_init(cfg.stem_channels, cfg.stem_channels, 3, rng);
    std::int64_t prev = cfg.stem_channels;
    for (std::size_t s = 0; s < 3; ++s) {
        const std::int64_t c = cfg.stage_channels[s];
        m.backbone.stages[s].conv1 = conv_init(c, prev, 3, rng);
        m.backbone.stages[s].conv2 = conv_init(c, c, 3, rng);
        m.backbone.stages[s].down = conv_init(c, c, 3, rng);
        prev = c;
    }
    for (std::size_t mod = 0; mod < 2; ++mod)
        for (std::size_t s = 0; s < 3; ++s) {
            m.adapters[mod][s] = make_adapter_weights(cfg.stage_channels[s], cfg.adapter_dim, rng,
                                                      cfg.zero_init_adapter_outputs);
            m.adapters[mod][s].rho = cfg.adapter_rho;
        }
    for (std::size_t l = 0; l < 3; ++l) {
        m.cei[l] = make_cei_weights(cfg.stage_channels[l], cfg.state_dim, rng);
    }
    m.mpf = make_mpf_weights(cfg.stage_channels, cfg.fusion_width, cfg.state_dim, rng,
                             cfg.completion_side);
    return m;
}

namespace {

// Walks every named tensor of a model in a fixed order; used for both
// flattening to a store and rebinding from one.
struct WeightIO {
    WeightStore* sink = nullptr;
    const WeightStore* source = nullptr;
    std::vector<std::string> missing;

    void tensor(const std::string& name, Tensor& t) {
        if (sink) {
            sink->insert(name, t);
            return;
        }
        const Tensor* found = source->find(name);
        if (!found) {
            missing.push_back(name);
            return;
        }
        if (found->shape() != t.shape()) {
            throw std::runtime_error("weight '" + name + "': stored shape " + shape_str(*found) +
                                     " does not match expected " + shape_str(t));
        }
        t = *found;
    }

    void conv(const std::string& prefix, ConvWeights& w) {
        tensor(prefix + ".kernel", w.kernel);
        if (w.bias) tensor(prefix + ".bias", *w.bias);
    }

    void scalar(const std::string& name, double& v) {
        Tensor t({1}, {v});
        tensor(name, t);
        v = t.at(0);
    }
};

void visit_region(const std::string& p, RegionSS2DWeights& w, WeightIO& io) {
    io.tensor(p + ".gn_gamma", w.gn_gamma);
    io.tensor(p + ".gn_beta", w.gn_beta);
    io.conv(p + ".dw3", w.dw3);
    io.conv(p + ".u_down", w.u_down);
    io.conv(p + ".u_up", w.u_up);
    io.conv(p + ".delta_down", w.delta_down);
    io.conv(p + ".delta_up", w.delta_up);
    for (std::size_t g = 0; g < 2; ++g) {
        io.conv(p + ".bc_down.g" + std::to_string(g), w.bc_down[g]);
        io.conv(p + ".bc_up.g" + std::to_string(g), w.bc_up[g]);
    }
    for (std::size_t i = 0; i < w.A_dir.size(); ++i) {
        io.tensor(p + ".A." + direction_name(w.directions[i]), w.A_dir[i]);
    }
    io.conv(p + ".out_proj", w.out_proj);
}

void visit_adapter(const std::string& p, AdapterWeights& w, WeightIO& io) {
    io.tensor(p + ".ln_gamma", w.ln_gamma);
    io.tensor(p + ".ln_beta", w.ln_beta);
    io.conv(p + ".down_proj", w.down_proj);
    io.conv(p + ".dw3", w.dw3);
    io.conv(p + ".dw5", w.dw5);
    io.conv(p + ".dw7", w.dw7);
    io.conv(p + ".mix_proj", w.mix_proj);
    io.conv(p + ".spatial_out", w.spatial_out);
    io.conv(p + ".freq_dw_low", w.freq_dw_low);
    io.conv(p + ".freq_dw_high", w.freq_dw_high);
    io.conv(p + ".ca_low", w.ca_low);
    io.conv(p + ".ca_high", w.ca_high);
    io.conv(p + ".freq_out_low", w.freq_out_low);
    io.conv(p + ".freq_out_high", w.freq_out_high);
    io.conv(p + ".router", w.router);
}

void visit_cei(const std::string& p, CEIWeights& w, WeightIO& io) {
    io.tensor(p + ".in_down", w.in_down);
    io.tensor(p + ".in_up", w.in_up);
    io.tensor(p + ".A", w.A);
    io.tensor(p + ".delta_w", w.delta_w);
    io.tensor(p + ".delta_b", w.delta_b);
    io.tensor(p + ".b_w", w.b_w);
    io.tensor(p + ".c_w", w.c_w);
    io.tensor(p + ".ln_gamma", w.ln_gamma);
    io.tensor(p + ".ln_beta", w.ln_beta);
    io.tensor(p + ".out_w", w.out_w);
    io.tensor(p + ".out_b", w.out_b);
}

void visit_attention(const std::string& p, DeepAttentionWeights& w, WeightIO& io) {
    io.tensor(p + ".wq", w.wq);
    io.tensor(p + ".bq", w.bq);
    io.tensor(p + ".wk", w.wk);
    io.tensor(p + ".bk", w.bk);
    io.tensor(p + ".wv", w.wv);
    io.tensor(p + ".bv", w.bv);
    io.tensor(p + ".wo", w.wo);
    io.tensor(p + ".bo", w.bo);
    io.tensor(p + ".ln1_gamma", w.ln1_gamma);
    io.tensor(p + ".ln1_beta", w.ln1_beta);
    io.tensor(p + ".ln2_gamma", w.ln2_gamma);
    io.tensor(p + ".ln2_beta", w.ln2_beta);
    io.tensor(p + ".ffn_w1", w.ffn_w1);
    io.tensor(p + ".ffn_b1", w.ffn_b1);
    io.tensor(p + ".ffn_w2", w.ffn_w2);
    io.tensor(p + ".ffn_b2", w.ffn_b2);
    io.scalar(p + ".pe_scale", w.pe_scale);
}

void visit_junction(const std::string& p, JunctionWeights& w, WeightIO& io) {
    for (auto side : {std::make_pair("ir", &w.ir), std::make_pair("rgb", &w.rgb)}) {
        const std::string q = p + ".completion." + side.first;
        io.conv(q + ".in_proj", side.second->in_proj);
        visit_region(q + ".scan", side.second->scan, io);
        io.conv(q + ".dw", side.second->dw);
    }
    io.conv(p + ".fusion.reduce", w.fuse.reduce);
    io.conv(p + ".fusion.conv3", w.fuse.conv3);
}

void visit_model(EncoderModel& m, WeightIO& io) {
    io.conv("backbone.stem1", m.backbone.stem1);
    io.conv("backbone.stem2", m.backbone.stem2);
    for (std::size_t s = 0; s < 3; ++s) {
        const std::string p = "backbone.stage" + std::to_string(s + 1);
        io.conv(p + ".conv1", m.backbone.stages[s].conv1);
        io.conv(p + ".conv2", m.backbone.stages[s].conv2);
        io.conv(p + ".down", m.backbone.stages[s].down);
    }
    const char* mods[2] = {"rgb", "ir"};
    for (std::size_t mod = 0; mod < 2; ++mod)
        for (std::size_t s = 0; s < 3; ++s) {
            visit_adapter("adapter." + std::string(mods[mod]) + ".stage" + std::to_string(s + 1),
                          m.adapters[mod][s], io);
        }
    for (std::size_t l = 0; l < 3; ++l) {
        visit_cei("cei.level" + std::to_string(l + 3), m.cei[l], io);
    }
    for (std::size_t l = 0; l < 3; ++l) {
        io.conv("mpf.fuse_proj.level" + std::to_string(l + 3), m.mpf.fuse_proj[l]);
    }
    visit_attention("mpf.attn", m.mpf.attn, io);
    visit_junction("mpf.td4", m.mpf.td4, io);
    visit_junction("mpf.td3", m.mpf.td3, io);
    visit_junction("mpf.bu4", m.mpf.bu4, io);
    visit_junction("mpf.bu5", m.mpf.bu5, io);
    io.conv("mpf.down4", m.mpf.down4);
    io.conv("mpf.down5", m.mpf.down5);
}

}  // namespace

WeightStore store_from_model(const EncoderModel& model) {
    EncoderModel copy = model;
    WeightStore store;
    WeightIO io;
    io.sink = &store;
    visit_model(copy, io);
    return store;
}

WeightStore make_default_store(const HarnessConfig& cfg) { return store_from_model(make_default_model(cfg)); }

EncoderModel bind_model(const WeightStore& store, const HarnessConfig& cfg) {
    EncoderModel m = make_default_model(cfg);
    WeightIO io;
    io.source = &store;
    visit_model(m, io);
    if (!io.missing.empty()) {
        std::string msg = "bind_model: missing " + std::to_string(io.missing.size()) + " weights:";
        for (const auto& n : io.missing) msg += " " + n;
        throw std::runtime_error(msg);
    }
    return m;
}

ModalityPair synth_pair(std::uint64_t seed, std::int64_t size) {
    if (size < 32 || size % 32 != 0) {
        throw std::invalid_argument("synth_pair: size must be a positive multiple of 32, got " +
                                    std::to_string(size));
    }
    SplitMix64 rng(seed);
    const std::int64_t S = size;

    // shared smooth base: three low-frequency plane waves
    double fh[3], fw[3], amp[3], phase[3];
    for (int k = 0; k < 3; ++k) {
        fh[k] = static_cast<double>(1 + rng.next() % 3);
        fw[k] = static_cast<double>(1 + rng.next() % 3);
        amp[k] = rng.uniform(0.5, 1.0);
        phase[k] = rng.uniform(0.0, 2.0 * std::numbers::pi);
    }
    Tensor base({S, S});
    for (std::int64_t h = 0; h < S; ++h)
        for (std::int64_t w = 0; w < S; ++w) {
            double v = 0.0;
            for (int k = 0; k < 3; ++k) {
                v += amp[k] * std::sin(2.0 * std::numbers::pi *
                                           (fh[k] * static_cast<double>(h) + fw[k] * static_cast<double>(w)) /
                                           static_cast<double>(S) +
                                       phase[k]);
            }
            base.at(h, w) = v;
        }

    ModalityPair p;
    p.rgb = Tensor({1, 3, S, S});
    p.ir = Tensor({1, 1, S, S});
    for (std::int64_t c = 0; c < 3; ++c) {
        const double a = rng.uniform(0.7, 1.3);
        for (std::int64_t h = 0; h < S; ++h) {
            double* dst = p.rgb.row(0, c, h);
            for (std::int64_t w = 0; w < S; ++w) dst[w] = a * base.at(h, w) + 0.3 * rng.sym(1.0);
        }
    }
    const double b = rng.uniform(0.8, 1.2);
    for (std::int64_t h = 0; h < S; ++h) {
        double* dst = p.ir.row(0, 0, h);
        for (std::int64_t w = 0; w < S; ++w) dst[w] = b * base.at(h, w) + 0.3 * rng.sym(1.0);
    }
    return p;
}

namespace {

Tensor stage_forward(const Tensor& x, const StageWeights& s) {
    Tensor h = activate(conv2d(x, s.conv1), Activation::silu);
    h = activate(conv2d(h, s.conv2), Activation::silu);
    return subsample_2x(conv2d(h, s.down));  // stride-2 3x3 downsampling
}

}  // namespace

std::array<Tensor, 3> backbone_features(const Tensor& x, const EncoderModel& m, int modality) {
    Tensor h = subsample_2x(activate(conv2d(x, m.backbone.stem1), Activation::silu));
    h = subsample_2x(activate(conv2d(h, m.backbone.stem2), Activation::silu));
    std::array<Tensor, 3> out;
    for (std::size_t s = 0; s < 3; ++s) {
        h = stage_forward(h, m.backbone.stages[s]);
        if (m.config.adapters_enabled) {
            h = adapter_forward(h, m.adapters[static_cast<std::size_t>(modality)][s]);
        }
        out[s] = h;
    }
    return out;
}

PyramidFeatures encoder_forward(const Tensor& rgb, const Tensor& ir, const EncoderModel& m) {
    if (rgb.rank() != 4 || rgb.extent(1) != 3) {
        throw std::invalid_argument("encoder_forward: rgb must be (B,3,H,W), got " + shape_str(rgb));
    }
    if (ir.rank() != 4 || ir.extent(1) != 1) {
        throw std::invalid_argument("encoder_forward: ir must be (B,1,H,W), got " + shape_str(ir));
    }
    if (rgb.extent(0) != ir.extent(0) || rgb.extent(2) != ir.extent(2) || rgb.extent(3) != ir.extent(3)) {
        throw std::invalid_argument("encoder_forward: modality shapes disagree: " + shape_str(rgb) +
                                    " vs " + shape_str(ir));
    }
    if (rgb.extent(2) % 32 != 0 || rgb.extent(3) % 32 != 0) {
        throw std::invalid_argument("encoder_forward: input sizes must be divisible by 32, got " +
                                    shape_str(rgb));
    }

    // the trunk is shared, so the single-channel modality is replicated to 3
    Tensor ir3 = concat_channels(std::array<Tensor, 3>{ir, ir, ir});

    std::array<Tensor, 3> f_rgb = backbone_features(rgb, m, 0);
    std::array<Tensor, 3> f_ir = backbone_features(ir3, m, 1);

    std::array<ModalityPair, 3> pairs;
    for (std::size_t l = 0; l < 3; ++l) {
        pairs[l] = cei_forward({f_rgb[l], f_ir[l]}, m.cei[l]);
    }
    return mpf_forward(pairs, m.mpf);
}

PyramidFeatures encoder_forward(const Tensor& rgb, const Tensor& ir, const WeightStore& store,
                                const HarnessConfig& cfg) {
    return encoder_forward(rgb, ir, bind_model(store, cfg));
}

LevelStats tensor_stats(const std::string& name, const Tensor& t) {
    LevelStats s;
    s.name = name;
    s.shape = t.shape();
    s.total = t.numel();
    double mn = 0.0, mx = 0.0, sum = 0.0;
    bool first = true;
    for (double v : t.data()) {
        if (!std::isfinite(v)) continue;
        ++s.finite;
        sum += v;
        if (first) {
            mn = mx = v;
            first = false;
        } else {
            mn = std::min(mn, v);
            mx = std::max(mx, v);
        }
    }
    if (s.finite > 0) {
        s.mean = sum / static_cast<double>(s.finite);
        double var = 0.0;
        for (double v : t.data()) {
            if (!std::isfinite(v)) continue;
            const double d = v - s.mean;
            var += d * d;
        }
        s.stddev = std::sqrt(var / static_cast<double>(s.finite));
        s.min = mn;
        s.max = mx;
    }
    return s;
}

std::string format_stats(const LevelStats& s) {
    char buf[512];
    std::string shape;
    for (std::size_t i = 0; i < s.shape.size(); ++i) {
        if (i) shape += "x";
        shape += std::to_string(s.shape[i]);
    }
    std::snprintf(buf, sizeof(buf),
                  "%s shape=%s mean=%.17g std=%.17g min=%.17g max=%.17g finite=%lld/%lld", s.name.c_str(),
                  shape.c_str(), s.mean, s.stddev, s.min, s.max, static_cast<long long>(s.finite),
                  static_cast<long long>(s.total));
    return std::string(buf);
}

}  // namespace mmk
