#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "mmk/adapter.hpp"
#include "mmk/encoder.hpp"
#include "mmk/weight_store.hpp"

namespace mmk {

// Desk-scale configuration: a three-stage shared trunk producing features at
// strides 8/16/32, per-modality residual adapters after every stage, one
// interaction block per level and the pyramid fusion on top.
struct HarnessConfig {
    std::array<std::int64_t, 3> stage_channels{32, 64, 128};
    std::int64_t stem_channels = 16;
    std::int64_t input_size = 256;
    std::int64_t adapter_dim = 128;
    double adapter_rho = 0.5;
    std::int64_t fusion_width = 128;
    std::int64_t state_dim = 16;
    std::uint64_t seed = 17;
    CompletionSide completion_side = CompletionSide::ir;
    bool zero_init_adapter_outputs = true;
    bool adapters_enabled = true;
};

struct StageWeights {
    ConvWeights conv1, conv2, down;
};

struct BackboneWeights {
    ConvWeights stem1, stem2;  // each followed by SiLU and a 2x reduction
    std::array<StageWeights, 3> stages;
};

struct EncoderModel {
    HarnessConfig config;
    BackboneWeights backbone;                               // shared across modalities
    std::array<std::array<AdapterWeights, 3>, 2> adapters;  // [modality][stage], 0 = rgb, 1 = ir
    std::array<CEIWeights, 3> cei;                          // per level
    MPFWeights mpf;
};

// Correlated modality pair: rgb (1,3,S,S) and ir (1,1,S,S) sharing a smooth
// low-frequency base with independent per-modality noise.
ModalityPair synth_pair(std::uint64_t seed, std::int64_t size);

EncoderModel make_default_model(const HarnessConfig& cfg);
WeightStore store_from_model(const EncoderModel& model);
WeightStore make_default_store(const HarnessConfig& cfg);

// Rebuilds a model from named tensors; throws listing every missing name.
EncoderModel bind_model(const WeightStore& store, const HarnessConfig& cfg);

// Stage features of one modality input (after adapters when enabled).
std::array<Tensor, 3> backbone_features(const Tensor& x, const EncoderModel& m, int modality);

PyramidFeatures encoder_forward(const Tensor& rgb, const Tensor& ir, const EncoderModel& m);
PyramidFeatures encoder_forward(const Tensor& rgb, const Tensor& ir, const WeightStore& store,
                                const HarnessConfig& cfg);

struct LevelStats {
    std::string name;
    Shape shape;
    double mean = 0.0, stddev = 0.0, min = 0.0, max = 0.0;
    std::int64_t finite = 0, total = 0;
};

LevelStats tensor_stats(const std::string& name, const Tensor& t);
std::string format_stats(const LevelStats& s);  // one line, 17 significant digits

}  // namespace mmk
