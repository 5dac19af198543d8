#include "covsynth/synth.hpp"

#include "covsynth/errors.hpp"

namespace covsynth {

std::string_view to_string(SynthKind kind) {
  switch (kind) {
    case SynthKind::LinPlusPer:
      return "lin_plus_per";
    case SynthKind::Periodic:
      return "periodic";
    case SynthKind::Linear:
      return "linear";
    case SynthKind::CpDemo:
      return "cp_demo";
  }
  return "?";
}

std::optional<SynthKind> parse_synth_kind(std::string_view name) {
  for (SynthKind kind : {SynthKind::LinPlusPer, SynthKind::Periodic, SynthKind::Linear,
                         SynthKind::CpDemo}) {
    if (to_string(kind) == name) return kind;
  }
  return std::nullopt;
}

KernelAst ground_truth_kernel(SynthKind kind) {
  switch (kind) {
    case SynthKind::Periodic:
      return KernelAst::leaf(BaseKernel::PER, {1.4, 3.0});
    case SynthKind::Linear:
      return KernelAst::leaf(BaseKernel::LIN, {5.0});
    case SynthKind::LinPlusPer:
      return KernelAst::sum(KernelAst::leaf(BaseKernel::LIN, {5.0}),
                            KernelAst::leaf(BaseKernel::PER, {1.0, 2.0}));
    case SynthKind::CpDemo:
      return KernelAst::changepoint(4.0, KernelAst::leaf(BaseKernel::SE, {2.0}),
                                    KernelAst::leaf(BaseKernel::PER, {1.0, 1.0}));
  }
  throw ArgumentError("unknown synthetic kind");
}

std::vector<double> uniform_grid(double lo, double hi, std::size_t n) {
  std::vector<double> xs(n, lo);
  if (n < 2) return xs;
  for (std::size_t i = 0; i < n; ++i) {
    xs[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  }
  return xs;
}

Dataset synth_data(SynthKind kind, std::size_t n, Rng& rng, double noise_var) {
  if (n == 0) throw ArgumentError("synth_data: n must be positive");
  Dataset out;
  out.xs = uniform_grid(0.0, 10.0, n);
  const GpPosterior prior =
      predict(ground_truth_kernel(kind), Dataset{}, out.xs, noise_var, /*noisy=*/true);
  const Eigen::VectorXd draw = sample_predictive(prior, rng, 1).front();
  out.ys.assign(draw.data(), draw.data() + draw.size());
  return out;
}

}  // namespace covsynth
