#pragma once

// Reactor-separator benchmark: two CSTRs in series and a flash separator
// recycling the vapour to CSTR 1. Reactions A -> B -> C. States are
// [xA1, xB1, T1, xA2, xB2, T2, xA3, xB3, T3], inputs the jacket heat rates
// [Q1, Q2, Q3] in kJ/h. No measured disturbances.

#include "dkoia/plant.hpp"

#include <string>

namespace dkoia::reactor_separator {

inline constexpr Index kStates = 9;
inline constexpr Index kInputs = 3;
inline constexpr double kSamplingPeriod = 0.005;  // h

/// Steady-state heat input used as the control set-point.
inline Vector nominal_input() { return (Vector(3) << 2.90e6, 1.00e6, 2.90e6).finished(); }

/// Initial state of the data-generation trajectory.
inline Vector data_initial_state() {
  return (Vector(9) << 0.1155, 0.6235, 497.3, 0.1367, 0.6053, 489.8, 0.0396, 0.5504, 491.8).finished();
}

/// Steady state reached from data_initial_state() under nominal_input() with
/// the shipped parameter file (40 h of relaxation, RK4). Checked by the plant
/// tests; see data/reactor_separator.steady.
inline Vector nominal_steady_state() {
  return (Vector(9) << 0.1916174498268117, 0.66007136877049533, 476.16668592193599,
          0.21447554261870655, 0.6404815543871285, 468.77640167821215, 0.074092302967854573,
          0.66585893665950813, 470.97259906683973)
      .finished();
}

/// Per-state process-noise sigma used for data generation (raw units).
inline Vector data_noise_std() {
  return (Vector(9) << 0.01, 0.01, 0.50, 0.01, 0.01, 0.50, 0.01, 0.01, 0.50).finished();
}

/// Per-input excitation noise sigma (kJ/h).
inline Vector excitation_noise_std() { return (Vector(3) << 3.25e4, 1.12e4, 3.25e4).finished(); }

struct Parameters {
  double F10, F20, Fr, Fp, V1, V2, V3, T10, T20, xA10, xB10, xA20, xB20;
  double E1, E2, k1, k2, dH1, dH2, MW, Hvap1, Hvap2, Hvap3, Cp, R, rho;
  double alphaA, alphaB, alphaC;
  double Q1_max, Q2_max, Q3_max;

  static Parameters from(const ParameterSet& s) {
    auto g = [&](const char* k) { return require_param(s, k); };
    return Parameters{g("F10"),   g("F20"),   g("Fr"),    g("Fp"),     g("V1"),     g("V2"),
                      g("V3"),    g("T10"),   g("T20"),   g("xA10"),   g("xB10"),   g("xA20"),
                      g("xB20"),  g("E1"),    g("E2"),    g("k1"),     g("k2"),     g("dH1"),
                      g("dH2"),   g("MW"),    g("Hvap1"), g("Hvap2"),  g("Hvap3"),  g("Cp"),
                      g("R"),     g("rho"),   g("alphaA"), g("alphaB"), g("alphaC"), g("Q1_max"),
                      g("Q2_max"), g("Q3_max")};
  }
};

inline Vector rhs(const Parameters& c, const Vector& x, const Vector& u) {
  const double xA1 = x[0], xB1 = x[1], T1 = x[2];
  const double xA2 = x[3], xB2 = x[4], T2 = x[5];
  const double xA3 = x[6], xB3 = x[7], T3 = x[8];

  const double F1 = c.F10 + c.Fr;
  const double F2 = F1 + c.F20;
  const double Fout = c.Fr + c.Fp;

  // Vapour (recycle) composition from constant relative volatilities.
  const double xC3 = 1.0 - xA3 - xB3;
  const double den = c.alphaA * xA3 + c.alphaB * xB3 + c.alphaC * xC3;
  const double xAr = c.alphaA * xA3 / den;
  const double xBr = c.alphaB * xB3 / den;
  const double xCr = c.alphaC * xC3 / den;

  const double r1_1 = c.k1 * std::exp(-c.E1 / (c.R * T1));
  const double r2_1 = c.k2 * std::exp(-c.E2 / (c.R * T1));
  const double r1_2 = c.k1 * std::exp(-c.E1 / (c.R * T2));
  const double r2_2 = c.k2 * std::exp(-c.E2 / (c.R * T2));
  const double heat = c.MW * c.Cp;  // kJ/(kmol K)

  Vector d(9);
  d[0] = c.F10 / c.V1 * (c.xA10 - xA1) + c.Fr / c.V1 * (xAr - xA1) - r1_1 * xA1;
  d[1] = c.F10 / c.V1 * (c.xB10 - xB1) + c.Fr / c.V1 * (xBr - xB1) + r1_1 * xA1 - r2_1 * xB1;
  d[2] = c.F10 / c.V1 * (c.T10 - T1) + c.Fr / c.V1 * (T3 - T1) - c.dH1 / heat * r1_1 * xA1 -
         c.dH2 / heat * r2_1 * xB1 + u[0] / (c.rho * c.Cp * c.V1);

  d[3] = F1 / c.V2 * (xA1 - xA2) + c.F20 / c.V2 * (c.xA20 - xA2) - r1_2 * xA2;
  d[4] = F1 / c.V2 * (xB1 - xB2) + c.F20 / c.V2 * (c.xB20 - xB2) + r1_2 * xA2 - r2_2 * xB2;
  d[5] = F1 / c.V2 * (T1 - T2) + c.F20 / c.V2 * (c.T20 - T2) - c.dH1 / heat * r1_2 * xA2 -
         c.dH2 / heat * r2_2 * xB2 + u[1] / (c.rho * c.Cp * c.V2);

  d[6] = F2 / c.V3 * (xA2 - xA3) - Fout / c.V3 * (xAr - xA3);
  d[7] = F2 / c.V3 * (xB2 - xB3) - Fout / c.V3 * (xBr - xB3);
  d[8] = F2 / c.V3 * (T2 - T3) + u[2] / (c.rho * c.Cp * c.V3) +
         Fout / (c.Cp * c.V3) * (xAr * c.Hvap1 + xBr * c.Hvap2 + xCr * c.Hvap3);
  return d;
}

inline PlantModel make_plant(const ParameterSet& set, std::string name = "reactor_separator") {
  const Parameters c = Parameters::from(set);
  PlantModel model;
  model.state_dim = kStates;
  model.input_dim = kInputs;
  model.disturbance_dim = 0;
  model.rhs = [c](const Vector& x, const Vector& u, const Vector&) { return rhs(c, x, u); };
  model.input_lower = Vector::Zero(3);
  model.input_upper = (Vector(3) << c.Q1_max, c.Q2_max, c.Q3_max).finished();
  if (const auto it = set.find("parameter_set"); it != set.end()) {
    name += "/" + std::to_string(static_cast<int>(it->second));
  }
  model.parameter_set_name = std::move(name);
  model.state_names = {"xA1", "xB1", "T1", "xA2", "xB2", "T2", "xA3", "xB3", "T3"};
  model.input_names = {"Q1", "Q2", "Q3"};
  model.validate();
  return model;
}

inline PlantModel load_plant(const std::string& parameter_file) {
  return make_plant(load_parameter_file(parameter_file));
}

/// Hold `u` constant and integrate for `max_hours`.
inline Vector relax_to_steady_state(const PlantModel& model, Vector x, const Vector& u,
                                    double max_hours = 40.0, double dt = kSamplingPeriod) {
  const Vector p = Vector::Zero(model.disturbance_dim);
  const auto steps = static_cast<long>(max_hours / dt);
  for (long k = 0; k < steps; ++k) x = integrate_step(model, x, u, p, dt);
  return x;
}

}  // namespace dkoia::reactor_separator
