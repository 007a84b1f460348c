#include "amsrc/objectives.hpp"

namespace amsrc {

LossReport total_loss(double l_int, double l_gd, double l_sim, double l_reg, const LossWeights& w) {
  const std::pair<const char*, double> terms[] = {{"l_int", l_int}, {"l_gd", l_gd}, {"l_sim", l_sim}, {"l_reg", l_reg}};
  for (const auto& [name, v] : terms)
    if (!std::isfinite(v)) fail(ErrorKind::numerical, std::string("non-finite loss term ") + name);
  LossReport r{l_int, l_gd, l_sim, l_reg, 0.0};
  r.total = w.lambda_int * l_int + w.lambda_gd * l_gd + w.lambda_sim * l_sim + w.lambda_model * l_reg;
  return r;
}

}  // namespace amsrc
