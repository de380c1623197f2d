#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "vwerc/common.hpp"

namespace vwerc {

using Shape = std::vector<int>;

inline std::int64_t numel(const Shape& shape) {
    std::int64_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_str(shape));
        n *= d;
    }
    return n;
}

// Dense row-major float32 tensor. Values are written once by the op that
// produces the tensor and treated as immutable afterwards; gradients
// accumulate during the backward pass. Copying a Tensor copies a handle,
// not the storage.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, bool requires_grad = false)
        : d_(std::make_shared<Data>()) {
        d_->shape = std::move(shape);
        d_->v.assign(static_cast<std::size_t>(numel(d_->shape)), 0.0f);
        set_requires_grad(requires_grad);
    }

    Tensor(Shape shape, std::vector<float> values, bool requires_grad = false)
        : d_(std::make_shared<Data>()) {
        d_->shape = std::move(shape);
        if (static_cast<std::int64_t>(values.size()) != numel(d_->shape)) {
            throw ShapeError("value count " + std::to_string(values.size()) +
                             " does not match shape " + shape_str(d_->shape));
        }
        d_->v = std::move(values);
        set_requires_grad(requires_grad);
    }

    static Tensor scalar(float v, bool requires_grad = false) {
        return Tensor({1}, {v}, requires_grad);
    }

    static Tensor full(Shape shape, float fill, bool requires_grad = false) {
        Tensor t(std::move(shape), requires_grad);
        for (float& x : t.values()) x = fill;
        return t;
    }

    bool defined() const { return static_cast<bool>(d_); }
    const Shape& shape() const { return d_->shape; }
    int rank() const { return static_cast<int>(d_->shape.size()); }
    int dim(int i) const { return d_->shape[static_cast<std::size_t>(i)]; }
    std::int64_t size() const { return static_cast<std::int64_t>(d_->v.size()); }

    std::vector<float>& values() { return d_->v; }
    const std::vector<float>& values() const { return d_->v; }

    bool requires_grad() const { return d_->requires_grad; }

    std::vector<float>& grad() {
        if (!d_->requires_grad) throw Error("grad() on tensor without requires_grad");
        return d_->g;
    }
    const std::vector<float>& grad() const {
        if (!d_->requires_grad) throw Error("grad() on tensor without requires_grad");
        return d_->g;
    }

    void zero_grad() {
        if (d_->requires_grad) d_->g.assign(d_->v.size(), 0.0f);
    }

    float at(int i) const { return d_->v[static_cast<std::size_t>(i)]; }
    float& at(int i) { return d_->v[static_cast<std::size_t>(i)]; }
    float at(int r, int c) const {
        return d_->v[static_cast<std::size_t>(r) * static_cast<std::size_t>(d_->shape[1]) +
                     static_cast<std::size_t>(c)];
    }
    float& at(int r, int c) {
        return d_->v[static_cast<std::size_t>(r) * static_cast<std::size_t>(d_->shape[1]) +
                     static_cast<std::size_t>(c)];
    }

    float item() const {
        if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
        return d_->v[0];
    }

    Tensor clone(bool requires_grad) const {
        return Tensor(d_->shape, d_->v, requires_grad);
    }

    bool same_storage(const Tensor& other) const { return d_ == other.d_; }

private:
    struct Data {
        Shape shape;
        std::vector<float> v;
        std::vector<float> g; // allocated iff requires_grad
        bool requires_grad = false;
    };

    void set_requires_grad(bool rg) {
        d_->requires_grad = rg;
        if (rg) d_->g.assign(d_->v.size(), 0.0f);
    }

    std::shared_ptr<Data> d_;
};

// Ordered record of the primitive operations of one forward pass. Each entry
// is the adjoint of one op; backward() replays them once, in reverse order.
// A tape is rebuilt per forward pass and must be used from a single thread;
// independent tapes may run concurrently as long as they accumulate into
// disjoint parameter gradients.
class Tape {
public:
    explicit Tape(bool recording = true) : recording_(recording) {}

    bool recording() const { return recording_; }

    void record(std::function<void()> adjoint) {
        if (recording_) ops_.push_back(std::move(adjoint));
    }

    std::size_t num_ops() const { return ops_.size(); }

    void backward(Tensor& loss) {
        if (loss.size() != 1) {
            throw ShapeError("backward() expects a scalar, got " + shape_str(loss.shape()));
        }
        if (!loss.requires_grad()) {
            throw Error("backward() on a tensor that does not require gradients");
        }
        loss.grad()[0] = 1.0f;
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
    }

private:
    std::vector<std::function<void()>> ops_;
    bool recording_;
};

} // namespace vwerc
