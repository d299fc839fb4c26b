// Copyright Contributors to the atlasgs project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "atlasgs/checkpoint.hpp"
#include "atlasgs/nn.hpp"

#include <cstddef>
#include <string>

namespace atlasgs {

struct AdamWOptions {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    /// Decoupled decay, applied to matrices (rank >= 2) only.
    double weight_decay = 0.01;
    /// Global gradient-norm clip; <= 0 disables.
    double clip_norm = 1.0;
};

/// Adam with decoupled weight decay over every tensor of a ParamStore.
class AdamW {
public:
    AdamW() = default;
    AdamW(ParamStore &store, AdamWOptions options = {});

    /// One update with learning rate `lr`; returns the pre-clip gradient norm.
    /// Parameters without a gradient are left untouched.
    double step(double lr);
    std::size_t steps() const { return t_; }

    /// Moment buffers and step count, for checkpoints.
    NamedTensors state(const std::string &prefix = "adamw/") const;
    void load_state(const NamedTensors &tensors, const std::string &prefix = "adamw/");

private:
    ParamStore *store_ = nullptr;
    AdamWOptions options_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    std::size_t t_ = 0;
};

struct OneCycle {
    double max_lr = 1e-3;
    std::size_t total_steps = 1;
    /// Fraction of steps spent warming up.
    double pct_start = 0.25;
    /// Initial lr = max_lr / div_factor.
    double div_factor = 25.0;
    /// Final lr = initial lr / final_div_factor.
    double final_div_factor = 1e4;

    /// Cosine warm-up then cosine annealing; `step` counts from 0.
    double lr(std::size_t step) const;
};

/// Global L2 norm of all parameter gradients.
double gradient_norm(const ParamStore &store);

} // namespace atlasgs
