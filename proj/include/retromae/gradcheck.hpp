// Copyright 2026 The retromae-desk Authors
// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference checks in double precision, for single ops and for
// a full pre-training step on a tiny model.

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "retromae/autodiff.hpp"
#include "retromae/config.hpp"

namespace retromae::gradcheck {

/// |a - n| / max(|a|, |n|, floor). The floor keeps gradients that are zero up
/// to rounding from producing huge ratios.
double relative_error(double analytic, double numeric, double floor = 1e-6);

struct Result {
  std::string name;
  double max_rel_error = 0.0;
  double max_abs_grad = 0.0;
  std::size_t checked = 0;
};

struct Report {
  std::vector<Result> items;

  double max_rel_error() const;
  std::size_t checked() const;
  /// One `name  max_rel_error  checked` line per item.
  std::string format() const;
};

/// Builds a scalar loss from the given leaf variables.
using LossFn = std::function<ad::Var<double>(ad::Tape<double>&, std::vector<ad::Var<double>>&)>;

/// Compares the tape gradient of `loss` w.r.t. every element of every input
/// with a central difference of step h.
Report check_function(const std::string& name, std::vector<Tensor<double>> inputs, const LossFn& loss,
                      double h = 1e-4);

/// Every differentiable op on randomized small shapes. The op output is
/// reduced with fixed random weights so each output element gets a distinct
/// upstream gradient.
Report check_ops(std::uint64_t seed, double h = 1e-4);

/// Tiny model used by the full-step check: 2 encoder layers, d=16, 4 heads,
/// ffn 64, L=8, V=50.
RunConfig tiny_config(DecodeMode mode, std::size_t decoder_layers = 1);

/// Loss of one pre-training step (fixed masks) against every parameter
/// element of the tiny model. `stride` > 1 checks every stride-th element.
Report check_model(DecodeMode mode, std::size_t decoder_layers, std::uint64_t seed,
                   double h = 1e-4, std::size_t stride = 1, double encoder_mlm_weight = 0.0);

}  // namespace retromae::gradcheck
