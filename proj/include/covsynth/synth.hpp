#pragma once

#include <optional>
#include <string_view>
#include <vector>

#include "covsynth/gp.hpp"
#include "covsynth/kernel_ast.hpp"
#include "covsynth/random.hpp"

namespace covsynth {

enum class SynthKind { LinPlusPer, Periodic, Linear, CpDemo };

std::string_view to_string(SynthKind kind);
std::optional<SynthKind> parse_synth_kind(std::string_view name);

/// Generating kernel of each synthetic family.
///   periodic      PER(lengthscale 1.4, period 3)
///   linear        LIN(5)
///   lin_plus_per  LIN(5) + PER(1, 2)
///   cp_demo       CP(4, SE(2), PER(1, 1))
KernelAst ground_truth_kernel(SynthKind kind);

/// `n` evenly spaced points on [lo, hi]; a single point sits at `lo`.
std::vector<double> uniform_grid(double lo, double hi, std::size_t n);

/// One draw of the ground-truth GP plus observation noise on an n-point grid over [0, 10].
Dataset synth_data(SynthKind kind, std::size_t n, Rng& rng, double noise_var = kBaselineNoise);

}  // namespace covsynth
