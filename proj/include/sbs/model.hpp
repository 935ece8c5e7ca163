#pragma once
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>
#include <sbs/autodiff.hpp>
#include <sbs/error.hpp>
#include <sbs/parameters.hpp>
#include <sbs/random.hpp>
#include <sbs/tensor.hpp>

namespace sbs {

struct DenseLayer { std::size_t in = 0, out = 0; };
struct ConvLayer { std::size_t in_channels = 0, out_channels = 0; };
struct BatchNormLayer { std::size_t channels = 0; };
struct ReluLayer {};
struct MaxPoolLayer {};
struct FlattenLayer {};

using LayerOp = std::variant<DenseLayer, ConvLayer, BatchNormLayer, ReluLayer, MaxPoolLayer, FlattenLayer>;

/// One node of the layer pipeline. `layer` is the trainable-layer index used
/// for grouping (0 for parameter-free ops); `groups` indexes ModelGraph::groups().
struct LayerDesc
{
    LayerOp op;
    std::size_t layer = 0;
    std::vector<std::size_t> groups;
    std::size_t batchnorm_slot = 0;
};

/// Running statistics for every batch-norm layer of a model.
using ModelBuffers = std::vector<ops::BatchNormBuffers>;

class ModelGraph
{
public:
    const Shape& input_shape() const noexcept { return input_shape_; }
    std::size_t input_size() const noexcept { return shape_size(input_shape_); }
    std::size_t class_count() const noexcept { return class_count_; }
    std::span<const LayerDesc> layers() const noexcept { return layers_; }
    std::span<const ParameterGroup> groups() const noexcept { return groups_; }
    std::size_t parameter_count() const noexcept { return owner_.size(); }
    std::size_t layer_count() const noexcept { return layer_count_; }

    /// Index into groups() of the group owning parameter `id`.
    std::size_t group_of(std::size_t id) const
    {
        if (id >= owner_.size()) {
            throw PreconditionError("parameter id " + std::to_string(id) + " out of range [0, "
                                    + std::to_string(owner_.size()) + ")");
        }
        return owner_[id];
    }

    /// (layer index, parameter type) of scalar parameter `id`.
    std::pair<std::size_t, ParamType> group_index(std::size_t id) const
    {
        const auto& g = groups_[group_of(id)];
        return {g.layer, g.type};
    }

    /// Scalar parameter count per trainable layer, indexed by layer - 1.
    std::vector<std::size_t> layer_sizes() const
    {
        std::vector<std::size_t> sizes(layer_count_, 0);
        for (const auto& g : groups_) sizes[g.layer - 1] += g.length;
        return sizes;
    }

    std::vector<std::size_t> group_sizes() const
    {
        std::vector<std::size_t> sizes;
        for (const auto& g : groups_) sizes.push_back(g.length);
        return sizes;
    }

    ParameterStore make_store() const { return ParameterStore(groups_); }

    ModelBuffers make_buffers() const
    {
        ModelBuffers b;
        for (const auto& l : layers_)
            if (const auto* bn = std::get_if<BatchNormLayer>(&l.op)) b.emplace_back(bn->channels);
        return b;
    }

    /// He-uniform weights, zero biases, unit scale, zero shift.
    void initialize(ParameterStore& store, SeedStream rng) const
    {
        check_store(store);
        auto w = store.mutable_values();
        for (const auto& g : groups_) {
            auto slice = w.subspan(g.offset, g.length);
            switch (g.type) {
                case ParamType::fully_connected:
                case ParamType::convolution: {
                    const std::size_t fan_in = g.length / g.shape[0];
                    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
                    for (auto& v : slice) v = rng.uniform(-bound, bound);
                    break;
                }
                case ParamType::batchnorm_scale:
                    for (auto& v : slice) v = 1.0;
                    break;
                case ParamType::bias:
                case ParamType::batchnorm_shift:
                    for (auto& v : slice) v = 0.0;
                    break;
            }
        }
    }

    void check_store(const ParameterStore& store) const
    {
        const auto sg = store.groups();
        bool ok = sg.size() == groups_.size();
        for (std::size_t i = 0; ok && i < sg.size(); ++i) {
            ok = sg[i].offset == groups_[i].offset && sg[i].length == groups_[i].length;
        }
        if (!ok) throw ShapeError("parameter store layout does not match the model graph");
    }

private:
    friend class ModelBuilder;

    Shape input_shape_;
    std::size_t class_count_ = 0;
    std::vector<LayerDesc> layers_;
    std::vector<ParameterGroup> groups_;
    std::vector<std::uint32_t> owner_;
    std::size_t layer_count_ = 0;
};

/// Incremental construction of a ModelGraph; tracks the per-sample shape.
class ModelBuilder
{
public:
    ModelBuilder(Shape input_shape, std::size_t class_count)
    {
        graph_.input_shape_ = input_shape;
        graph_.class_count_ = class_count;
        shape_ = std::move(input_shape);
    }

    ModelBuilder& dense(std::size_t out, bool batchnorm = false)
    {
        if (shape_.size() != 1) flatten();
        const std::size_t in = shape_[0];
        const std::size_t layer = ++graph_.layer_count_;
        LayerDesc d{DenseLayer{in, out}, layer, {}, 0};
        d.groups.push_back(add_group(layer, ParamType::fully_connected, {out, in}));
        d.groups.push_back(add_group(layer, ParamType::bias, {out}));
        graph_.layers_.push_back(std::move(d));
        shape_ = {out};
        if (batchnorm) add_batchnorm(layer, out);
        return *this;
    }

    ModelBuilder& conv3x3(std::size_t out_channels, bool batchnorm = true)
    {
        if (shape_.size() != 3) throw ShapeError("conv3x3 needs a (C,H,W) input, got " + shape_string(shape_));
        const std::size_t layer = ++graph_.layer_count_;
        LayerDesc d{ConvLayer{shape_[0], out_channels}, layer, {}, 0};
        d.groups.push_back(add_group(layer, ParamType::convolution, {out_channels, shape_[0], 3, 3}));
        d.groups.push_back(add_group(layer, ParamType::bias, {out_channels}));
        graph_.layers_.push_back(std::move(d));
        shape_[0] = out_channels;
        if (batchnorm) add_batchnorm(layer, out_channels);
        return *this;
    }

    ModelBuilder& relu()
    {
        graph_.layers_.push_back(LayerDesc{ReluLayer{}, 0, {}, 0});
        return *this;
    }

    ModelBuilder& max_pool()
    {
        if (shape_.size() != 3 || shape_[1] % 2 || shape_[2] % 2) {
            throw ShapeError("max_pool needs even spatial extents, got " + shape_string(shape_));
        }
        graph_.layers_.push_back(LayerDesc{MaxPoolLayer{}, 0, {}, 0});
        shape_[1] /= 2;
        shape_[2] /= 2;
        return *this;
    }

    ModelBuilder& flatten()
    {
        graph_.layers_.push_back(LayerDesc{FlattenLayer{}, 0, {}, 0});
        shape_ = {shape_size(shape_)};
        return *this;
    }

    ModelGraph build()
    {
        if (shape_ != Shape{graph_.class_count_}) {
            throw ShapeError("model output " + shape_string(shape_) + " does not match "
                             + std::to_string(graph_.class_count_) + " classes");
        }
        if (graph_.groups_.empty()) throw PreconditionError("model has no trainable parameters");
        return std::move(graph_);
    }

private:
    std::size_t add_group(std::size_t layer, ParamType type, Shape shape)
    {
        ParameterGroup g;
        g.layer = layer;
        g.type = type;
        g.offset = graph_.owner_.size();
        g.length = shape_size(shape);
        g.shape = std::move(shape);
        const auto idx = graph_.groups_.size();
        graph_.owner_.insert(graph_.owner_.end(), g.length, static_cast<std::uint32_t>(idx));
        graph_.groups_.push_back(std::move(g));
        return idx;
    }

    void add_batchnorm(std::size_t layer, std::size_t channels)
    {
        LayerDesc d{BatchNormLayer{channels}, layer, {}, batchnorm_count_++};
        d.groups.push_back(add_group(layer, ParamType::batchnorm_scale, {channels}));
        d.groups.push_back(add_group(layer, ParamType::batchnorm_shift, {channels}));
        graph_.layers_.push_back(std::move(d));
    }

    ModelGraph graph_;
    Shape shape_;
    std::size_t batchnorm_count_ = 0;
};

namespace detail {

inline std::size_t positive_dim(long long v, const char* what)
{
    if (v <= 0) throw PreconditionError(std::string(what) + " must be positive, got " + std::to_string(v));
    return static_cast<std::size_t>(v);
}

} // namespace detail

/// Fully-connected classifier: [dense (+bn) + relu] per hidden width, then a
/// dense output layer. An empty `hidden` list yields logistic regression.
inline ModelGraph build_mlp(long long input_dim, std::span<const long long> hidden, long long class_count,
                            bool use_batchnorm)
{
    ModelBuilder b({detail::positive_dim(input_dim, "input dimension")},
                   detail::positive_dim(class_count, "class count"));
    for (auto h : hidden) {
        b.dense(detail::positive_dim(h, "hidden width"), use_batchnorm);
        b.relu();
    }
    b.dense(static_cast<std::size_t>(class_count));
    return b.build();
}

inline ModelGraph build_mlp(long long input_dim, std::initializer_list<long long> hidden, long long class_count,
                            bool use_batchnorm)
{
    return build_mlp(input_dim, std::span<const long long>(hidden.begin(), hidden.size()), class_count,
                     use_batchnorm);
}

/// [conv3x3 + bn + relu + maxpool] per entry of `channels`, then a dense
/// classifier on the flattened feature map.
inline ModelGraph build_small_cnn(std::span<const long long> input_shape, std::span<const long long> channels,
                                  long long class_count)
{
    if (input_shape.size() != 3) throw PreconditionError("CNN input shape must be (channels, height, width)");
    Shape in;
    for (auto d : input_shape) in.push_back(detail::positive_dim(d, "input extent"));
    const std::size_t div = std::size_t{1} << channels.size();
    if (in[1] % div || in[2] % div) {
        throw ShapeError("spatial extents " + std::to_string(in[1]) + "x" + std::to_string(in[2])
                         + " are not divisible by 2^" + std::to_string(channels.size()));
    }
    ModelBuilder b(in, detail::positive_dim(class_count, "class count"));
    for (auto c : channels) {
        b.conv3x3(detail::positive_dim(c, "channel count"));
        b.relu();
        b.max_pool();
    }
    b.flatten();
    b.dense(static_cast<std::size_t>(class_count));
    return b.build();
}

inline ModelGraph build_small_cnn(std::initializer_list<long long> input_shape, std::initializer_list<long long> channels,
                                  long long class_count)
{
    return build_small_cnn(std::span<const long long>(input_shape.begin(), input_shape.size()),
                           std::span<const long long>(channels.begin(), channels.size()), class_count);
}

enum class Mode { train, eval };

struct ForwardResult
{
    Tape tape;
    Var logits;
    Var loss;
    LossValue loss_value;
};

/*
 * Records the network on a fresh tape and returns the mean cross-entropy.
 * `inputs` has leading extent N and N * input_size() values. In training
 * mode batch-norm running statistics in `buffers` are updated when non-null;
 * evaluation mode requires them.
 */
inline ForwardResult forward(const ModelGraph& graph, const ParameterStore& params, const Tensor& inputs,
                             std::span<const int> labels, Mode mode, ModelBuffers* buffers = nullptr)
{
    graph.check_store(params);
    if (inputs.rank() < 1 || inputs.dim(0) != labels.size()) {
        throw ShapeError("input batch " + shape_string(inputs.shape()) + " does not match "
                         + std::to_string(labels.size()) + " labels");
    }
    const std::size_t n = inputs.dim(0);
    if (inputs.size() != n * graph.input_size()) {
        throw ShapeError("input batch " + shape_string(inputs.shape()) + " does not match model input "
                         + shape_string(graph.input_shape()));
    }
    if (buffers && buffers->size() != graph.make_buffers().size()) {
        throw ShapeError("batch-norm buffer count does not match the model graph");
    }
    Shape batch_shape{n};
    batch_shape.insert(batch_shape.end(), graph.input_shape().begin(), graph.input_shape().end());

    ForwardResult r;
    Tape& t = r.tape;
    Var x = t.constant(inputs.reshaped(batch_shape));
    if (!t.value(x).all_finite()) throw NumericalError("non-finite value in input batch");
    const bool training = mode == Mode::train;

    std::size_t position = 0;
    for (const auto& l : graph.layers()) {
        ++position;
        std::visit([&](const auto& op) {
            using T = std::decay_t<decltype(op)>;
            if constexpr (std::is_same_v<T, DenseLayer>) {
                if (t.value(x).rank() != 2) x = ops::flatten(t, x);
                x = ops::linear(t, x, t.parameter(params, l.groups[0]));
                x = ops::add_channel_bias(t, x, t.parameter(params, l.groups[1]));
            } else if constexpr (std::is_same_v<T, ConvLayer>) {
                x = ops::conv2d_3x3(t, x, t.parameter(params, l.groups[0]));
                x = ops::add_channel_bias(t, x, t.parameter(params, l.groups[1]));
            } else if constexpr (std::is_same_v<T, BatchNormLayer>) {
                ops::BatchNormBuffers* buf = buffers ? &(*buffers)[l.batchnorm_slot] : nullptr;
                x = ops::batch_norm(t, x, t.parameter(params, l.groups[0]), t.parameter(params, l.groups[1]),
                                    training, buf);
            } else if constexpr (std::is_same_v<T, ReluLayer>) {
                x = ops::relu(t, x);
            } else if constexpr (std::is_same_v<T, MaxPoolLayer>) {
                x = ops::max_pool2x2(t, x);
            } else {
                x = ops::flatten(t, x);
            }
        }, l.op);
        if (!t.value(x).all_finite()) {
            throw NumericalError("non-finite activation after pipeline stage " + std::to_string(position)
                                 + (l.layer ? " (layer " + std::to_string(l.layer) + ")" : std::string()));
        }
    }
    r.logits = x;
    auto ce = ops::softmax_cross_entropy(t, x, labels);
    if (!std::isfinite(ce.value.scalar)) throw NumericalError("non-finite loss");
    r.loss = ce.loss;
    r.loss_value = std::move(ce.value);
    return r;
}

/// forward() followed by backward(); returns the flat parameter gradient.
inline std::vector<double> loss_gradient(const ModelGraph& graph, const ParameterStore& params, const Tensor& inputs,
                                         std::span<const int> labels, LossValue* loss = nullptr,
                                         ModelBuffers* buffers = nullptr)
{
    auto r = forward(graph, params, inputs, labels, Mode::train, buffers);
    auto g = backward(r.tape, r.loss, params);
    if (loss) *loss = std::move(r.loss_value);
    return g;
}

} // namespace sbs
