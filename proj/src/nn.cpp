#include "fedrm/nn.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>

namespace fedrm {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using ColVec = Eigen::Matrix<double, Eigen::Dynamic, 1>;

ConstMatMap as_matrix(const Tensor& t, std::size_t rows, std::size_t cols, std::size_t offset = 0) {
    return ConstMatMap(t.ptr() + offset, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

MatMap as_matrix(Tensor& t, std::size_t rows, std::size_t cols, std::size_t offset = 0) {
    return MatMap(t.ptr() + offset, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

struct ConvGeometry {
    std::size_t channels, height, width;  // image
    std::size_t kernel_h, kernel_w, stride, padding;
    std::size_t out_h, out_w;             // positions of the sliding window

    std::size_t col_rows() const { return channels * kernel_h * kernel_w; }
    std::size_t col_cols() const { return out_h * out_w; }
};

// Unfolds one image (channels x height x width) into a (C*kh*kw) x (oh*ow) matrix.
void im2col(const double* img, const ConvGeometry& g, double* col) {
    const std::size_t positions = g.col_cols();
    for (std::size_t c = 0; c < g.channels; ++c) {
        for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
            for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
                double* row = col + ((c * g.kernel_h + ki) * g.kernel_w + kj) * positions;
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) -
                                    static_cast<std::ptrdiff_t>(g.padding);
                    double* dst = row + oy * g.out_w;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) {
                        std::fill_n(dst, g.out_w, 0.0);
                        continue;
                    }
                    const double* src = img + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) -
                                        static_cast<std::ptrdiff_t>(g.padding);
                        dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width))
                                      ? 0.0
                                      : src[static_cast<std::size_t>(ix)];
                    }
                }
            }
        }
    }
}

// Adjoint of im2col: accumulates columns back into the image (which is not cleared).
void col2im(const double* col, const ConvGeometry& g, double* img) {
    const std::size_t positions = g.col_cols();
    for (std::size_t c = 0; c < g.channels; ++c) {
        for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
            for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
                const double* row = col + ((c * g.kernel_h + ki) * g.kernel_w + kj) * positions;
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) -
                                    static_cast<std::ptrdiff_t>(g.padding);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
                    double* dst = img + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
                    const double* src = row + oy * g.out_w;
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) -
                                        static_cast<std::ptrdiff_t>(g.padding);
                        if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.width)) {
                            dst[static_cast<std::size_t>(ix)] += src[ox];
                        }
                    }
                }
            }
        }
    }
}

// Geometry of a forward convolution applied to `input` (C, H, W).
ConvGeometry conv_geometry(const LayerSpec& spec, const Shape& input) {
    ConvGeometry g{input[0], input[1], input[2], spec.kernel_h, spec.kernel_w, spec.stride, spec.padding, 0, 0};
    g.out_h = (g.height + 2 * g.padding - g.kernel_h) / g.stride + 1;
    g.out_w = (g.width + 2 * g.padding - g.kernel_w) / g.stride + 1;
    return g;
}

// A transposed convolution is the adjoint of a convolution whose image is the
// transposed layer's output; this returns that convolution's geometry.
ConvGeometry transposed_geometry(const LayerSpec& spec, const Shape& input, const Shape& output) {
    return ConvGeometry{output[0], output[1], output[2], spec.kernel_h, spec.kernel_w,
                        spec.stride, spec.padding, input[1], input[2]};
}

void require_spatial(const Shape& s, std::string_view what) {
    if (s.size() != 3) throw ShapeError(std::string(what) + " expects (C, H, W) input, got " + shape_str(s));
}

Tensor dense_forward(const LayerSpec& spec, const ParamSet& params, std::size_t layer, const Tensor& x) {
    const std::size_t n = x.dim(0);
    Tensor y({n, spec.out_units});
    const Tensor& w = params.get(layer, "weight");
    const Tensor& b = params.get(layer, "bias");
    auto ym = as_matrix(y, n, spec.out_units);
    ym.noalias() = as_matrix(x, n, spec.in_units) * as_matrix(w, spec.out_units, spec.in_units).transpose();
    ym.rowwise() += as_matrix(b, 1, spec.out_units).row(0);
    return y;
}

Tensor conv_forward(const LayerSpec& spec, const ParamSet& params, std::size_t layer, const Tensor& x,
                    const Shape& out_shape) {
    const Shape in_shape = x.sample_shape();
    const ConvGeometry g = conv_geometry(spec, in_shape);
    const std::size_t n = x.dim(0);
    const std::size_t in_size = shape_size(in_shape);
    const std::size_t out_size = shape_size(out_shape);
    Shape batched{n};
    batched.insert(batched.end(), out_shape.begin(), out_shape.end());
    Tensor y(batched);
    const Tensor& w = params.get(layer, "weight");
    const Tensor& b = params.get(layer, "bias");
    const auto wm = as_matrix(w, spec.out_channels, g.col_rows());
    const auto bias = as_matrix(b, spec.out_channels, 1);
    RowMat col(g.col_rows(), g.col_cols());
    for (std::size_t s = 0; s < n; ++s) {
        im2col(x.ptr() + s * in_size, g, col.data());
        auto ym = as_matrix(y, spec.out_channels, g.col_cols(), s * out_size);
        ym.noalias() = wm * col;
        ym.colwise() += bias.col(0);
    }
    return y;
}

Tensor transposed_conv_forward(const LayerSpec& spec, const ParamSet& params, std::size_t layer, const Tensor& x,
                               const Shape& out_shape) {
    const Shape in_shape = x.sample_shape();
    const ConvGeometry g = transposed_geometry(spec, in_shape, out_shape);
    const std::size_t n = x.dim(0);
    const std::size_t in_size = shape_size(in_shape);
    const std::size_t out_size = shape_size(out_shape);
    const std::size_t out_plane = out_shape[1] * out_shape[2];
    Shape batched{n};
    batched.insert(batched.end(), out_shape.begin(), out_shape.end());
    Tensor y(batched);
    const Tensor& w = params.get(layer, "weight");
    const Tensor& b = params.get(layer, "bias");
    const auto wm = as_matrix(w, spec.in_channels, g.col_rows());
    RowMat col(g.col_rows(), g.col_cols());
    for (std::size_t s = 0; s < n; ++s) {
        col.noalias() = wm.transpose() * as_matrix(x, spec.in_channels, g.col_cols(), s * in_size);
        double* out = y.ptr() + s * out_size;
        col2im(col.data(), g, out);
        for (std::size_t c = 0; c < spec.out_channels; ++c) {
            const double bias = b[c];
            double* plane = out + c * out_plane;
            for (std::size_t i = 0; i < out_plane; ++i) plane[i] += bias;
        }
    }
    return y;
}

Shape with_batch(std::size_t n, const Shape& sample) {
    Shape s{n};
    s.insert(s.end(), sample.begin(), sample.end());
    return s;
}

}  // namespace

std::string_view to_string(LayerKind kind) {
    switch (kind) {
        case LayerKind::dense: return "dense";
        case LayerKind::conv2d: return "conv2d";
        case LayerKind::relu: return "relu";
        case LayerKind::maxpool2x2: return "maxpool2x2";
        case LayerKind::unpool2x2: return "unpool2x2";
        case LayerKind::flatten: return "flatten";
        case LayerKind::unflatten: return "unflatten";
        case LayerKind::transposed_conv2d: return "transposed_conv2d";
    }
    return "unknown";
}

LayerSpec LayerSpec::dense(std::size_t in, std::size_t out) {
    LayerSpec s;
    s.kind = LayerKind::dense;
    s.in_units = in;
    s.out_units = out;
    return s;
}

LayerSpec LayerSpec::conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::size_t stride,
                            std::size_t padding) {
    if (kernel == 0 || stride == 0) throw ShapeError("conv2d kernel and stride must be positive");
    LayerSpec s;
    s.kind = LayerKind::conv2d;
    s.in_channels = in_ch;
    s.out_channels = out_ch;
    s.kernel_h = s.kernel_w = kernel;
    s.stride = stride;
    s.padding = padding;
    return s;
}

LayerSpec LayerSpec::transposed_conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel,
                                       std::size_t stride, std::size_t padding) {
    LayerSpec s = conv2d(in_ch, out_ch, kernel, stride, padding);
    s.kind = LayerKind::transposed_conv2d;
    return s;
}

LayerSpec LayerSpec::relu() { return LayerSpec{}; }

LayerSpec LayerSpec::maxpool2x2() {
    LayerSpec s;
    s.kind = LayerKind::maxpool2x2;
    return s;
}

LayerSpec LayerSpec::unpool2x2() {
    LayerSpec s;
    s.kind = LayerKind::unpool2x2;
    return s;
}

LayerSpec LayerSpec::flatten() {
    LayerSpec s;
    s.kind = LayerKind::flatten;
    return s;
}

LayerSpec LayerSpec::unflatten(Shape shape) {
    LayerSpec s;
    s.kind = LayerKind::unflatten;
    s.target_shape = std::move(shape);
    return s;
}

Shape LayerSpec::output_shape(const Shape& input) const {
    const auto fail = [&](std::string_view why) -> Shape {
        throw ShapeError(std::string(to_string(kind)) + ": " + std::string(why) + " (input " + shape_str(input) + ")");
    };
    switch (kind) {
        case LayerKind::dense:
            if (input.size() != 1 || input[0] != in_units) return fail("expects a vector of in_units");
            return {out_units};
        case LayerKind::conv2d: {
            require_spatial(input, "conv2d");
            if (input[0] != in_channels) return fail("channel mismatch");
            if (input[1] + 2 * padding < kernel_h || input[2] + 2 * padding < kernel_w) {
                return fail("kernel larger than padded input");
            }
            return {out_channels, (input[1] + 2 * padding - kernel_h) / stride + 1,
                    (input[2] + 2 * padding - kernel_w) / stride + 1};
        }
        case LayerKind::transposed_conv2d: {
            require_spatial(input, "transposed_conv2d");
            if (input[0] != in_channels) return fail("channel mismatch");
            const std::size_t full_h = (input[1] - 1) * stride + kernel_h;
            const std::size_t full_w = (input[2] - 1) * stride + kernel_w;
            if (full_h <= 2 * padding || full_w <= 2 * padding) return fail("padding too large");
            return {out_channels, full_h - 2 * padding, full_w - 2 * padding};
        }
        case LayerKind::relu: return input;
        case LayerKind::maxpool2x2:
            require_spatial(input, "maxpool2x2");
            if (input[1] % 2 || input[2] % 2) return fail("spatial dims must be even");
            return {input[0], input[1] / 2, input[2] / 2};
        case LayerKind::unpool2x2:
            require_spatial(input, "unpool2x2");
            return {input[0], input[1] * 2, input[2] * 2};
        case LayerKind::flatten: return {shape_size(input)};
        case LayerKind::unflatten:
            if (shape_size(input) != shape_size(target_shape)) return fail("element count mismatch");
            return target_shape;
    }
    return fail("unknown layer kind");
}

Shape LayerSpec::weight_shape() const {
    switch (kind) {
        case LayerKind::dense: return {out_units, in_units};
        case LayerKind::conv2d: return {out_channels, in_channels, kernel_h, kernel_w};
        case LayerKind::transposed_conv2d: return {in_channels, out_channels, kernel_h, kernel_w};
        default: return {};
    }
}

Shape LayerSpec::bias_shape() const {
    switch (kind) {
        case LayerKind::dense: return {out_units};
        case LayerKind::conv2d:
        case LayerKind::transposed_conv2d: return {out_channels};
        default: return {};
    }
}

std::size_t LayerSpec::fan_in() const {
    switch (kind) {
        case LayerKind::dense: return in_units;
        case LayerKind::conv2d:
        case LayerKind::transposed_conv2d: return in_channels * kernel_h * kernel_w;
        default: return 0;
    }
}

std::vector<Shape> ModelGraph::activation_shapes() const {
    std::vector<Shape> shapes{input_shape};
    shapes.reserve(layers.size() + 1);
    for (const auto& layer : layers) shapes.push_back(layer.output_shape(shapes.back()));
    return shapes;
}

Shape ModelGraph::output_shape() const { return activation_shapes().back(); }

std::size_t ModelGraph::parameter_count() const {
    std::size_t count = 0;
    for (const auto& layer : layers) {
        if (layer.has_params()) count += shape_size(layer.weight_shape()) + shape_size(layer.bias_shape());
    }
    return count;
}

// ---------------------------------------------------------------- ParamSet

void ParamSet::add(std::size_t layer, std::string name, Tensor value) {
    if (find(layer, name)) throw Error("duplicate parameter " + std::to_string(layer) + "." + name);
    entries_.push_back(ParamEntry{layer, std::move(name), std::move(value)});
}

const Tensor* ParamSet::find(std::size_t layer, std::string_view name) const {
    for (const auto& e : entries_) {
        if (e.layer == layer && e.name == name) return &e.value;
    }
    return nullptr;
}

const Tensor& ParamSet::get(std::size_t layer, std::string_view name) const {
    if (const Tensor* t = find(layer, name)) return *t;
    throw Error("missing parameter " + std::to_string(layer) + "." + std::string(name));
}

Tensor& ParamSet::get(std::size_t layer, std::string_view name) {
    return const_cast<Tensor&>(std::as_const(*this).get(layer, name));
}

std::size_t ParamSet::element_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
}

ParamSet ParamSet::zeros_like() const {
    ParamSet out;
    out.entries_.reserve(entries_.size());
    for (const auto& e : entries_) out.entries_.push_back(ParamEntry{e.layer, e.name, Tensor(e.value.shape())});
    return out;
}

bool ParamSet::same_layout(const ParamSet& other) const {
    if (entries_.size() != other.entries_.size()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        const auto& a = entries_[i];
        const auto& b = other.entries_[i];
        if (a.layer != b.layer || a.name != b.name || a.value.shape() != b.value.shape()) return false;
    }
    return true;
}

void ParamSet::require_same_layout(const ParamSet& other, std::string_view what) const {
    if (!same_layout(other)) throw ShapeError(std::string(what) + ": parameter sets differ in keys or shapes");
}

ParamSet& ParamSet::axpy(double alpha, const ParamSet& other) {
    require_same_layout(other, "axpy");
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        auto dst = entries_[i].value.data();
        auto src = other.entries_[i].value.data();
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += alpha * src[k];
    }
    return *this;
}

ParamSet& ParamSet::scale(double alpha) {
    for (auto& e : entries_) {
        for (double& v : e.value.data()) v *= alpha;
    }
    return *this;
}

double ParamSet::squared_norm() const {
    double acc = 0.0;
    for (const auto& e : entries_) acc += e.value.squared_norm();
    return acc;
}

double ParamSet::squared_distance(const ParamSet& other) const {
    require_same_layout(other, "squared_distance");
    double acc = 0.0;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        auto a = entries_[i].value.data();
        auto b = other.entries_[i].value.data();
        for (std::size_t k = 0; k < a.size(); ++k) {
            const double d = a[k] - b[k];
            acc += d * d;
        }
    }
    return acc;
}

bool operator==(const ParamSet& a, const ParamSet& b) {
    if (!a.same_layout(b)) return false;
    for (std::size_t i = 0; i < a.entries_.size(); ++i) {
        if (!(a.entries_[i].value == b.entries_[i].value)) return false;
    }
    return true;
}

ParamSet linear_combination(std::span<const double> coeffs, std::span<const ParamSet* const> sets) {
    if (coeffs.size() != sets.size() || sets.empty()) {
        throw Error("linear_combination needs one coefficient per set and at least one set");
    }
    ParamSet out = sets[0]->zeros_like();
    for (std::size_t i = 0; i < sets.size(); ++i) out.axpy(coeffs[i], *sets[i]);
    return out;
}

ParamSet init_params(const ModelGraph& graph, Rng& rng) {
    ParamSet params;
    for (std::size_t i = 0; i < graph.layers.size(); ++i) {
        const auto& layer = graph.layers[i];
        if (!layer.has_params()) continue;
        const double bound = 1.0 / std::sqrt(static_cast<double>(layer.fan_in()));
        Tensor w(layer.weight_shape());
        for (double& v : w.data()) v = rng.uniform(-bound, bound);
        params.add(i, "weight", std::move(w));
        params.add(i, "bias", Tensor(layer.bias_shape()));
    }
    return params;
}

ParamSet sgd_step(const ParamSet& params, const ParamSet& grads, double lr) {
    ParamSet out = params;
    apply_sgd(out, grads, lr);
    return out;
}

void apply_sgd(ParamSet& params, const ParamSet& grads, double lr) {
    params.require_same_layout(grads, "sgd_step");
    params.axpy(-lr, grads);
}

// ---------------------------------------------------------------- pooling

Tensor maxpool_forward(const Tensor& x, PoolSwitches* switches) {
    if (x.rank() != 4) throw ShapeError("maxpool2x2 expects (N, C, H, W), got " + shape_str(x.shape()));
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (h % 2 || w % 2) throw ShapeError("maxpool2x2 needs even spatial dims, got " + shape_str(x.shape()));
    const std::size_t oh = h / 2, ow = w / 2;
    Tensor y({n, c, oh, ow});
    std::vector<std::uint32_t> argmax(y.size());
    std::size_t out = 0;
    for (std::size_t plane = 0; plane < n * c; ++plane) {
        const std::size_t base = plane * h * w;
        for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox, ++out) {
                std::size_t best = base + (2 * oy) * w + 2 * ox;
                const std::size_t candidates[3] = {best + 1, best + w, best + w + 1};
                for (std::size_t cand : candidates) {
                    if (x[cand] > x[best]) best = cand;  // ties keep the first in row-major order
                }
                y[out] = x[best];
                argmax[out] = static_cast<std::uint32_t>(best);
            }
        }
    }
    if (switches) *switches = PoolSwitches{x.shape(), std::move(argmax)};
    return y;
}

Tensor unpool_forward(const Tensor& x, const PoolSwitches& switches) {
    const Shape& pre = switches.input_shape;
    if (pre.size() != 4 || x.rank() != 4 || x.dim(0) != pre[0] || x.dim(1) != pre[1] || x.dim(2) * 2 != pre[2] ||
        x.dim(3) * 2 != pre[3] || switches.argmax.size() != x.size()) {
        throw ShapeError("unpool input " + shape_str(x.shape()) + " does not match switches for " + shape_str(pre));
    }
    Tensor y(pre);
    for (std::size_t i = 0; i < x.size(); ++i) y[switches.argmax[i]] = x[i];
    return y;
}

// ---------------------------------------------------------------- forward / backward

ForwardTrace forward(const ModelGraph& graph, const ParamSet& params, const Tensor& x,
                     std::span<const PoolSwitches* const> unpool_switches) {
    if (x.rank() != graph.input_shape.size() + 1 || x.sample_shape() != graph.input_shape) {
        throw ShapeError("input " + shape_str(x.shape()) + " does not match graph input " +
                         shape_str(graph.input_shape));
    }
    x.require_finite("forward input");
    ForwardTrace trace;
    trace.activations.reserve(graph.layers.size() + 1);
    trace.switches.resize(graph.layers.size());
    trace.activations.push_back(x);
    std::size_t next_unpool = 0;
    for (std::size_t i = 0; i < graph.layers.size(); ++i) {
        const LayerSpec& spec = graph.layers[i];
        const Tensor& in = trace.activations.back();
        const std::size_t n = in.dim(0);
        const Shape out_shape = spec.output_shape(in.sample_shape());
        Tensor out;
        switch (spec.kind) {
            case LayerKind::dense: out = dense_forward(spec, params, i, in); break;
            case LayerKind::conv2d: out = conv_forward(spec, params, i, in, out_shape); break;
            case LayerKind::transposed_conv2d: out = transposed_conv_forward(spec, params, i, in, out_shape); break;
            case LayerKind::relu: {
                out = in;
                for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
                break;
            }
            case LayerKind::maxpool2x2: {
                PoolSwitches sw;
                out = maxpool_forward(in, &sw);
                trace.switches[i] = std::move(sw);
                break;
            }
            case LayerKind::unpool2x2: {
                if (next_unpool >= unpool_switches.size() || !unpool_switches[next_unpool]) {
                    throw ShapeError("unpool layer " + std::to_string(i) + " has no switches");
                }
                const PoolSwitches& sw = *unpool_switches[next_unpool++];
                out = unpool_forward(in, sw);
                trace.switches[i] = sw;
                break;
            }
            case LayerKind::flatten:
            case LayerKind::unflatten: out = in.reshaped(with_batch(n, out_shape)); break;
        }
        out.require_finite("output of layer " + std::to_string(i) + " (" + std::string(to_string(spec.kind)) + ")");
        trace.activations.push_back(std::move(out));
    }
    return trace;
}

BackwardResult backward(const ModelGraph& graph, const ParamSet& params, const ForwardTrace& trace,
                        const Tensor& output_grad, const BackwardOptions& options) {
    const std::size_t layers = graph.layers.size();
    if (trace.layer_count() != layers || trace.activations.size() != layers + 1) {
        throw ShapeError("trace has " + std::to_string(trace.layer_count()) + " layers, graph has " +
                         std::to_string(layers));
    }
    if (output_grad.shape() != trace.output().shape()) {
        throw ShapeError("output gradient " + shape_str(output_grad.shape()) + " does not match output " +
                         shape_str(trace.output().shape()));
    }
    const auto& injected = options.activation_grads;
    if (!injected.empty() && injected.size() != layers + 1) {
        throw ShapeError("activation_grads must have one slot per activation");
    }
    const auto inject = [&](std::size_t index, Tensor& g) {
        if (injected.empty() || !injected[index]) return;
        const Tensor& extra = *injected[index];
        if (extra.shape() != g.shape()) throw ShapeError("injected gradient shape mismatch at activation " + std::to_string(index));
        auto dst = g.data();
        auto src = extra.data();
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    };

    BackwardResult result{params.zeros_like(), Tensor{}};
    Tensor g = output_grad;
    inject(layers, g);
    for (std::size_t idx = layers; idx-- > 0;) {
        const LayerSpec& spec = graph.layers[idx];
        const Tensor& in = trace.activations[idx];
        const std::size_t n = in.dim(0);
        const bool want_input = idx > 0 || options.need_input_grad;
        Tensor gin;
        switch (spec.kind) {
            case LayerKind::dense: {
                const Tensor& w = params.get(idx, "weight");
                auto gm = as_matrix(g, n, spec.out_units);
                as_matrix(result.param_grads.get(idx, "weight"), spec.out_units, spec.in_units).noalias() =
                    gm.transpose() * as_matrix(in, n, spec.in_units);
                Tensor& db = result.param_grads.get(idx, "bias");
                for (std::size_t i = 0; i < n; ++i) {
                    const double* row = g.ptr() + i * spec.out_units;
                    for (std::size_t u = 0; u < spec.out_units; ++u) db[u] += row[u];
                }
                if (want_input) {
                    gin = Tensor(in.shape());
                    as_matrix(gin, n, spec.in_units).noalias() = gm * as_matrix(w, spec.out_units, spec.in_units);
                }
                break;
            }
            case LayerKind::conv2d: {
                const Shape in_shape = in.sample_shape();
                const ConvGeometry geo = conv_geometry(spec, in_shape);
                const std::size_t in_size = shape_size(in_shape);
                const std::size_t out_size = spec.out_channels * geo.col_cols();
                const auto wm = as_matrix(params.get(idx, "weight"), spec.out_channels, geo.col_rows());
                auto dw = as_matrix(result.param_grads.get(idx, "weight"), spec.out_channels, geo.col_rows());
                Tensor& db = result.param_grads.get(idx, "bias");
                if (want_input) gin = Tensor(in.shape());
                RowMat col(geo.col_rows(), geo.col_cols());
                RowMat dcol(geo.col_rows(), geo.col_cols());
                for (std::size_t s = 0; s < n; ++s) {
                    const auto gm = as_matrix(g, spec.out_channels, geo.col_cols(), s * out_size);
                    im2col(in.ptr() + s * in_size, geo, col.data());
                    dw.noalias() += gm * col.transpose();
                    const std::size_t plane = geo.col_cols();
                    for (std::size_t c = 0; c < spec.out_channels; ++c) {
                        const double* gc = g.ptr() + s * out_size + c * plane;
                        double acc = 0.0;
                        for (std::size_t k = 0; k < plane; ++k) acc += gc[k];
                        db[c] += acc;
                    }
                    if (want_input) {
                        dcol.noalias() = wm.transpose() * gm;
                        col2im(dcol.data(), geo, gin.ptr() + s * in_size);
                    }
                }
                break;
            }
            case LayerKind::transposed_conv2d: {
                const Shape in_shape = in.sample_shape();
                const Shape out_shape = trace.activations[idx + 1].sample_shape();
                const ConvGeometry geo = transposed_geometry(spec, in_shape, out_shape);
                const std::size_t in_size = shape_size(in_shape);
                const std::size_t out_size = shape_size(out_shape);
                const std::size_t out_plane = out_shape[1] * out_shape[2];
                const auto wm = as_matrix(params.get(idx, "weight"), spec.in_channels, geo.col_rows());
                auto dw = as_matrix(result.param_grads.get(idx, "weight"), spec.in_channels, geo.col_rows());
                Tensor& db = result.param_grads.get(idx, "bias");
                if (want_input) gin = Tensor(in.shape());
                RowMat dcol(geo.col_rows(), geo.col_cols());
                for (std::size_t s = 0; s < n; ++s) {
                    const double* gs = g.ptr() + s * out_size;
                    im2col(gs, geo, dcol.data());
                    const auto xm = as_matrix(in, spec.in_channels, geo.col_cols(), s * in_size);
                    dw.noalias() += xm * dcol.transpose();
                    for (std::size_t c = 0; c < spec.out_channels; ++c) {
                        double acc = 0.0;
                        for (std::size_t k = 0; k < out_plane; ++k) acc += gs[c * out_plane + k];
                        db[c] += acc;
                    }
                    if (want_input) {
                        as_matrix(gin, spec.in_channels, geo.col_cols(), s * in_size).noalias() = wm * dcol;
                    }
                }
                break;
            }
            case LayerKind::relu: {
                if (!want_input) break;
                gin = g;
                auto gi = gin.data();
                auto xi = in.data();
                for (std::size_t k = 0; k < gi.size(); ++k) {
                    if (!(xi[k] > 0.0)) gi[k] = 0.0;
                }
                break;
            }
            case LayerKind::maxpool2x2: {
                if (!want_input) break;
                const auto& sw = trace.switches[idx];
                if (!sw) throw ShapeError("trace is missing maxpool switches at layer " + std::to_string(idx));
                gin = Tensor(in.shape());
                for (std::size_t k = 0; k < g.size(); ++k) gin[sw->argmax[k]] += g[k];
                break;
            }
            case LayerKind::unpool2x2: {
                if (!want_input) break;
                const auto& sw = trace.switches[idx];
                if (!sw) throw ShapeError("trace is missing unpool switches at layer " + std::to_string(idx));
                gin = Tensor(in.shape());
                for (std::size_t k = 0; k < gin.size(); ++k) gin[k] = g[sw->argmax[k]];
                break;
            }
            case LayerKind::flatten:
            case LayerKind::unflatten:
                if (want_input) gin = std::move(g).reshaped(in.shape());
                break;
        }
        if (!want_input) break;
        g = std::move(gin);
        inject(idx, g);
    }
    if (options.need_input_grad) result.input_grad = std::move(g);
    return result;
}

}  // namespace fedrm
