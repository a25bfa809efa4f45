#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "collabod/blocks.hpp"
#include "collabod/head.hpp"
#include "collabod/tape.hpp"

namespace collabod {

enum class LayerKind { dpf_stem, dablock, brm, conv, maxpool, upsample, uda_head };

std::string_view to_string(LayerKind kind);
LayerKind parse_layer_kind(std::string_view name);

// Reserved layer id naming the model input.
inline constexpr std::string_view kInputId = "input";

struct LayerSpec {
    std::string id;
    LayerKind kind = LayerKind::conv;
    std::vector<std::string> inputs;
    std::map<std::string, std::string> options;
    int line = 0;

    // Typed option access; throws an Error naming the layer when the value
    // is malformed.
    int get_int(const std::string& key, int fallback) const;
    std::optional<std::string> get(const std::string& key) const;
};

struct ModelConfig {
    std::string name = "model";
    Shape input{1, 3, 64, 64};
    int num_classes = 10;
    int bins = 16;
    int hidden = 32;
    std::uint64_t seed = 0;
    bool bias = true;
    std::vector<LayerSpec> layers;

    // Layer ids bound to xs, s, m, l by the uda_head layer.
    std::array<std::string, kNumScales> head_bindings() const;
};

// Line-oriented grammar, see docs/config.md.
ModelConfig parse_config(std::string_view text);
ModelConfig load_config(const std::filesystem::path& path);

struct ConvLayer {
    ConvParams conv;
};
struct PoolLayer {
    ops::PoolWindow window;
};
struct UpsampleLayer {
    int factor = 2;
};
struct DaBlockLayer {
    DaBlockParams params;
    int residual_input = 0;  // index into Layer::inputs of the current-stage input
};
struct HeadLayer {
    UdaHeadParams params;
    AnchorGrid anchors;
};

using LayerParams =
    std::variant<ConvLayer, PoolLayer, UpsampleLayer, DpfStemParams, DaBlockLayer, BrmParams, HeadLayer>;

struct Layer {
    LayerSpec spec;
    // Indices of producer layers; -1 is the model input.
    std::vector<int> inputs;
    LayerParams params;
    Shape output;  // unset for the head
};

struct NamedTensor {
    std::string name;
    Tensor value;
};

// Executable graph. Layers run in declaration order. A model either ends in
// a uda_head layer or is a feature-only graph (complexity and ERF only).
// Built models are immutable; concurrent forward calls are safe.
class Model {
public:
    static Model build(const ModelConfig& cfg);

    const ModelConfig& config() const { return config_; }
    const std::vector<Layer>& layers() const { return layers_; }
    bool has_head() const;
    const Layer& head_layer() const { return layers_.back(); }
    const UdaHeadParams& head() const;
    const AnchorGrid& anchors() const;
    // Index of a layer id, -1 for the input, throws for unknown ids.
    int layer_index(std::string_view id) const;

    std::size_t param_count() const;

    struct Trace {
        Var image;
        std::vector<Var> outputs;  // one per feature layer
        std::optional<HeadVars> head;
    };
    // Records the forward pass; stops after `last_layer` when given.
    Trace trace(GradTape& tape, Var image, std::optional<int> last_layer = std::nullopt) const;

    HeadOutput forward(const Tensor& image) const;

    // Copy whose head detail convolution is merged into a single kernel.
    Model reparameterized() const;

    std::vector<NamedTensor> parameters() const;
    // Shapes and names must match parameters() exactly.
    void set_parameters(const std::vector<NamedTensor>& params);

private:
    ModelConfig config_;
    std::vector<Layer> layers_;
};

// Parameter file: "CPAR", version byte, u32 entry count, then per entry a
// u32 name length, the name bytes and one CTEN tensor.
std::vector<std::uint8_t> save_params(const Model& model);
void load_params(Model& model, const std::vector<std::uint8_t>& bytes);
void save_params_file(const Model& model, const std::filesystem::path& path);
void load_params_file(Model& model, const std::filesystem::path& path);

struct LayerCost {
    std::string id;
    std::string kind;
    std::size_t params = 0;
    std::size_t macs = 0;
};

struct FlopsReport {
    std::vector<LayerCost> layers;
    std::size_t total_params = 0;
    std::size_t total_macs = 0;
    std::string dominant_layer;
    std::optional<HeadComplexity> head;

    std::size_t total_flops() const { return 2 * total_macs; }
};

// Convolution MACs count every kernel tap of every output site, zero padding
// included; pooling, upsampling and elementwise work count zero. The head
// adds the DFL expectation.
FlopsReport count_complexity(const Model& model);

struct ErfMap {
    Tensor magnitude;  // (1, 1, H, W), peak normalized to 1
    double area_fraction = 0.0;
    double threshold = 0.2;
    int samples = 8;
    std::uint64_t seed = 0;
};

ErfMap estimate_erf(const Model& model, std::string_view probe, int samples = 8,
                    std::uint64_t seed = 0, double threshold = 0.2);

}  // namespace collabod
