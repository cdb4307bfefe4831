#include "fairdistill/optim.hpp"

#include <cmath>

namespace fairdistill {

void Adam::step(const std::vector<DenseMat*>& params, const std::vector<const DenseMat*>& grads) {
  if (params.size() != grads.size()) throw ShapeError("Adam::step: parameter and gradient counts differ");
  if (m_.empty()) {
    for (const DenseMat* p : params) {
      m_.emplace_back(p->rows(), p->cols());
      v_.emplace_back(p->rows(), p->cols());
    }
  }
  if (m_.size() != params.size()) throw ShapeError("Adam::step: parameter list changed between steps");
  ++t_;
  const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    DenseMat& p = *params[k];
    const DenseMat& g = *grads[k];
    if (!p.same_shape(g) || !p.same_shape(m_[k])) {
      throw ShapeError("Adam::step: shape mismatch for parameter " + std::to_string(k));
    }
    auto& pd = p.data();
    const auto& gd = g.data();
    auto& md = m_[k].data();
    auto& vd = v_[k].data();
    for (std::size_t i = 0; i < pd.size(); ++i) {
      const double gi = gd[i] + opt_.weight_decay * pd[i];
      md[i] = opt_.beta1 * md[i] + (1.0 - opt_.beta1) * gi;
      vd[i] = opt_.beta2 * vd[i] + (1.0 - opt_.beta2) * gi * gi;
      const double mhat = md[i] / bc1;
      const double vhat = vd[i] / bc2;
      pd[i] -= opt_.learning_rate * mhat / (std::sqrt(vhat) + opt_.epsilon);
    }
  }
}

}  // namespace fairdistill
