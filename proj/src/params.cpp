#include "poolcal/params.hpp"

#include "poolcal/errors.hpp"

namespace poolcal {

Eigen::VectorXd VarianceComponents::to_vector() const {
  Eigen::VectorXd v(size());
  v.head(num_labs()) = lab;
  v[num_labs()] = xi;
  v[num_labs() + 1] = x;
  return v;
}

VarianceComponents VarianceComponents::from_vector(const Eigen::VectorXd& packed) {
  if (packed.size() < 3)
    throw ContractError("packed variance components need at least three entries");
  VarianceComponents s;
  const auto labs = packed.size() - 2;
  s.lab = packed.head(labs);
  s.xi = packed[labs];
  s.x = packed[labs + 1];
  return s;
}

std::string VarianceComponents::component_name(int k, int num_labs) {
  if (k < num_labs) return "sigma2_lab[" + std::to_string(k) + "]";
  if (k == num_labs) return "sigma2_xi";
  return "sigma2_x";
}

}  // namespace poolcal
