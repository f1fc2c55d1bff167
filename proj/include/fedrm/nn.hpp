#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedrm/rng.hpp"
#include "fedrm/tensor.hpp"

namespace fedrm {

enum class LayerKind {
    dense,
    conv2d,
    relu,
    maxpool2x2,
    unpool2x2,
    flatten,
    unflatten,
    transposed_conv2d,
};

std::string_view to_string(LayerKind kind);

/// One layer of a feed-forward graph. Only the fields relevant to `kind` are
/// meaningful. Shapes below are per sample (no batch dimension).
///
/// Weight layouts:
///   dense              weight (out_units, in_units),  bias (out_units)
///   conv2d             weight (out_ch, in_ch, kh, kw), bias (out_ch)
///   transposed_conv2d  weight (in_ch, out_ch, kh, kw), bias (out_ch)
struct LayerSpec {
    LayerKind kind = LayerKind::relu;
    std::size_t in_units = 0;
    std::size_t out_units = 0;
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    std::size_t kernel_h = 0;
    std::size_t kernel_w = 0;
    std::size_t stride = 1;
    std::size_t padding = 0;
    Shape target_shape;  // unflatten

    static LayerSpec dense(std::size_t in, std::size_t out);
    static LayerSpec conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel,
                            std::size_t stride = 1, std::size_t padding = 0);
    static LayerSpec transposed_conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel,
                                       std::size_t stride = 1, std::size_t padding = 0);
    static LayerSpec relu();
    static LayerSpec maxpool2x2();
    static LayerSpec unpool2x2();
    static LayerSpec flatten();
    static LayerSpec unflatten(Shape shape);

    bool has_params() const noexcept {
        return kind == LayerKind::dense || kind == LayerKind::conv2d ||
               kind == LayerKind::transposed_conv2d;
    }

    /// Per-sample output shape; throws ShapeError when `input` is incompatible.
    Shape output_shape(const Shape& input) const;

    Shape weight_shape() const;
    Shape bias_shape() const;
    std::size_t fan_in() const;
};

struct ModelGraph {
    Shape input_shape;
    std::vector<LayerSpec> layers;

    /// Shapes of all activations: index 0 is the input, index i + 1 the
    /// output of layer i.
    std::vector<Shape> activation_shapes() const;
    Shape output_shape() const;
    std::size_t parameter_count() const;
};

struct ParamEntry {
    std::size_t layer = 0;
    std::string name;
    Tensor value;
};

/// Named trainable tensors of a graph, ordered by layer then name.
class ParamSet {
public:
    void add(std::size_t layer, std::string name, Tensor value);

    const Tensor& get(std::size_t layer, std::string_view name) const;
    Tensor& get(std::size_t layer, std::string_view name);
    const Tensor* find(std::size_t layer, std::string_view name) const;

    std::span<ParamEntry> entries() noexcept { return entries_; }
    std::span<const ParamEntry> entries() const noexcept { return entries_; }
    std::size_t size() const noexcept { return entries_.size(); }
    std::size_t element_count() const;

    /// Zero-valued set with the same keys and shapes.
    ParamSet zeros_like() const;

    bool same_layout(const ParamSet& other) const;
    void require_same_layout(const ParamSet& other, std::string_view what) const;

    /// this += alpha * other
    ParamSet& axpy(double alpha, const ParamSet& other);
    ParamSet& scale(double alpha);

    double squared_norm() const;
    double squared_distance(const ParamSet& other) const;

    friend bool operator==(const ParamSet& a, const ParamSet& b);

private:
    std::vector<ParamEntry> entries_;
};

/// Sum_i coeffs[i] * sets[i].
ParamSet linear_combination(std::span<const double> coeffs, std::span<const ParamSet* const> sets);

/// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero.
ParamSet init_params(const ModelGraph& graph, Rng& rng);

/// params - lr * grads
ParamSet sgd_step(const ParamSet& params, const ParamSet& grads, double lr);
/// In-place form of sgd_step.
void apply_sgd(ParamSet& params, const ParamSet& grads, double lr);

/// Argmax positions recorded by a 2x2 max-pool: for each pooled element, the
/// flat index of the winning element in the (batched) pre-pool tensor.
struct PoolSwitches {
    Shape input_shape;
    std::vector<std::uint32_t> argmax;
};

struct ForwardTrace {
    /// activations[0] is the input; activations[i + 1] is the output of layer i.
    std::vector<Tensor> activations;
    /// Switches produced by each maxpool layer or consumed by each unpool layer.
    std::vector<std::optional<PoolSwitches>> switches;

    std::size_t layer_count() const noexcept { return switches.size(); }
    const Tensor& input() const { return activations.front(); }
    const Tensor& output() const { return activations.back(); }
};

/// Runs `x` (batched) through the graph. Unpool layers take their switches,
/// in layer order, from `unpool_switches`.
ForwardTrace forward(const ModelGraph& graph, const ParamSet& params, const Tensor& x,
                     std::span<const PoolSwitches* const> unpool_switches = {});

struct BackwardResult {
    ParamSet param_grads;
    Tensor input_grad;
};

struct BackwardOptions {
    /// Optional extra gradients injected at intermediate activations, indexed
    /// like ForwardTrace::activations. Empty, or one pointer (possibly null)
    /// per activation.
    std::span<const Tensor* const> activation_grads = {};
    bool need_input_grad = true;
};

BackwardResult backward(const ModelGraph& graph, const ParamSet& params, const ForwardTrace& trace,
                        const Tensor& output_grad, const BackwardOptions& options = {});

Tensor maxpool_forward(const Tensor& x, PoolSwitches* switches);
Tensor unpool_forward(const Tensor& x, const PoolSwitches& switches);

}  // namespace fedrm
