#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "lcnet/error.hpp"
#include "lcnet/rng.hpp"

namespace lcnet::nn {

enum class Init { glorot_uniform, zeros, embedding_uniform };

/// A named rows x cols view into the flat parameter array.
struct ParamBlock {
    std::string name;
    std::size_t offset = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;
    Init init = Init::zeros;
    std::size_t fan_in = 0;
    std::size_t fan_out = 0;

    std::size_t size() const { return rows * cols; }
};

/// Flat trainable-parameter store; blocks are laid out in registration order.
class NetworkWeights {
public:
    std::size_t add(std::string name, std::size_t rows, std::size_t cols, Init init, std::size_t fan_in = 0,
                    std::size_t fan_out = 0) {
        ParamBlock b{std::move(name), values_.size(), rows, cols, init, fan_in, fan_out};
        values_.resize(values_.size() + b.size(), 0.0);
        blocks_.push_back(std::move(b));
        return blocks_.size() - 1;
    }

    std::size_t size() const noexcept { return values_.size(); }
    std::span<double> values() noexcept { return values_; }
    std::span<const double> values() const noexcept { return values_; }
    const std::vector<ParamBlock>& blocks() const noexcept { return blocks_; }
    const ParamBlock& info(std::size_t i) const { return blocks_.at(i); }

    std::span<double> block(std::size_t i) {
        const auto& b = blocks_.at(i);
        return {values_.data() + b.offset, b.size()};
    }
    std::span<const double> block(std::size_t i) const {
        const auto& b = blocks_.at(i);
        return {values_.data() + b.offset, b.size()};
    }

    /// Gradient buffer slice aligned with block i.
    std::span<double> slice(std::span<double> grads, std::size_t i) const {
        const auto& b = blocks_.at(i);
        return grads.subspan(b.offset, b.size());
    }

    /// Glorot-uniform kernels, zero biases, embeddings uniform(-0.05, 0.05).
    void initialize(Rng& rng) {
        for (std::size_t i = 0; i < blocks_.size(); ++i) {
            const auto& b = blocks_[i];
            auto vals = block(i);
            switch (b.init) {
            case Init::zeros:
                for (double& v : vals) v = 0.0;
                break;
            case Init::embedding_uniform:
                for (double& v : vals) v = rng.uniform(-0.05, 0.05);
                break;
            case Init::glorot_uniform: {
                const double limit = std::sqrt(6.0 / static_cast<double>(b.fan_in + b.fan_out));
                for (double& v : vals) v = rng.uniform(-limit, limit);
                break;
            }
            }
        }
    }

    void assign(std::vector<double> values) {
        if (values.size() != values_.size()) throw DimensionError("weights: value count does not match layout");
        values_ = std::move(values);
    }

    bool all_finite() const {
        for (double v : values_)
            if (!std::isfinite(v)) return false;
        return true;
    }

private:
    std::vector<double> values_;
    std::vector<ParamBlock> blocks_;
};

} // namespace lcnet::nn
