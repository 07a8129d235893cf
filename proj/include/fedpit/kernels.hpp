#pragma once

#include <span>
#include <vector>

#include "fedpit/tinylm.hpp"

namespace fedpit::kernels {

// Sum of per-position losses and gradients over a batch, plus the position count.
struct BatchGradient {
  double loss_sum = 0.0;
  std::size_t positions = 0;
  lm::Matrix grad_a;  // V x r
  lm::Matrix grad_b;  // d x r
};

/// Reference implementation. Sequences are processed one after another and
/// each sequence's contribution is folded into the total in batch order.
BatchGradient adapter_gradient_serial(const lm::BackboneParams& backbone,
                                      const lm::AdapterParams& adapter,
                                      std::span<const lm::TrainingSequence* const> batch);

/// OpenMP version. Per-sequence partials are computed concurrently and folded
/// in batch order, so the result is bit-identical to the serial kernel.
BatchGradient adapter_gradient_omp(const lm::BackboneParams& backbone,
                                   const lm::AdapterParams& adapter,
                                   std::span<const lm::TrainingSequence* const> batch);

// Gradient of the backbone's E and W0 (no adapter) for pretraining.
struct BackboneGradient {
  double loss_sum = 0.0;
  std::size_t positions = 0;
  lm::Matrix grad_embed;
  lm::Matrix grad_out;
};

BackboneGradient backbone_gradient_serial(const lm::BackboneParams& backbone,
                                          std::span<const lm::TrainingSequence* const> batch);
BackboneGradient backbone_gradient_omp(const lm::BackboneParams& backbone,
                                       std::span<const lm::TrainingSequence* const> batch);

// Loss only.
double adapter_loss_sum(const lm::BackboneParams& backbone, const lm::AdapterParams& adapter,
                        const lm::TrainingSequence& seq, std::size_t* positions = nullptr);

int max_threads();

}  // namespace fedpit::kernels
