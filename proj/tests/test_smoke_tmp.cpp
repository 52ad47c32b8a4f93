#include "contractlab/contractlab.hpp"
#include <iostream>
int main() {
  auto spec = contractlab::model::builtin_example("ou");
  auto cert = contractlab::auxfun::certificate(*spec.profile, 1.0, 1.0, {1.0, 1.0});
  std::cout << "kappa=" << cert.kappa << " C1=" << cert.C1 << " C2=" << cert.C2
            << " c0=" << cert.c0 << " c1=" << cert.c1 << " c2=" << cert.c2 << "\n";
  auto psi = contractlab::auxfun::build_psi(*spec.profile, 1.0, 1.0, {1.0, 1.0});
  std::cout << "psi(0.5)=" << psi.psi(0.5) << " psi(1)=" << psi.psi(1.0)
            << " psi(4)=" << psi.psi(4.0) << "\n";
  return 0;
}
