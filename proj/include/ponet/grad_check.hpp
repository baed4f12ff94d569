#pragma once

// Central finite-difference verifier. Coordinates whose +h/-h evaluations
// land on different pooling winners straddle a non-differentiable point;
// they are flagged and excluded from pass/fail instead of compared.

#include <functional>
#include <json.hpp>
#include <string>
#include <utility>
#include <vector>

#include "ponet/encoder_grad.hpp"

namespace ponet {

inline double relative_error(double a, double b) {
  return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), 1e-8});
}

struct GradCoordinate {
  std::string param;
  int64_t index = 0;
  double analytic = 0;
  double fd = 0;
  double rel_err = 0;
};

struct GradReport {
  double max_rel_err = 0;
  double mean_rel_err = 0;
  int64_t coords_checked = 0;
  std::vector<GradCoordinate> failures;  // rel_err above tolerance
  std::vector<GradCoordinate> flagged;   // excluded max-switch coordinates
  double tolerance = 0;

  bool passed() const { return failures.empty(); }

  nlohmann::json to_json() const {
    auto coord = [](const GradCoordinate& c) {
      return nlohmann::json{{"param", c.param},
                            {"index", c.index},
                            {"analytic", c.analytic},
                            {"fd", c.fd},
                            {"rel_err", c.rel_err}};
    };
    nlohmann::json j{{"max_rel_err", max_rel_err},
                     {"mean_rel_err", mean_rel_err},
                     {"coords_checked", coords_checked},
                     {"tolerance", tolerance},
                     {"passed", passed()}};
    j["failures"] = nlohmann::json::array();
    for (const auto& c : failures) j["failures"].push_back(coord(c));
    j["flagged"] = nlohmann::json::array();
    for (const auto& c : flagged) j["flagged"].push_back(coord(c));
    return j;
  }
};

struct ParamRef {
  std::string name;
  Tensor<double>* tensor;
  const Tensor<double>* analytic;
};

// eval() must be a pure function of the referenced tensors returning
// {scalar value, pooling signature}.
using EvalFn = std::function<std::pair<double, unsigned long long>()>;

inline GradReport fd_check(const std::vector<ParamRef>& params,
                           const EvalFn& eval, double h, double tol) {
  if (!(h >= 1e-7 && h <= 1e-3))
    throw ConfigError("fd_check step size must be in [1e-7, 1e-3]");
  GradReport report;
  report.tolerance = tol;
  double err_sum = 0;
  for (const ParamRef& p : params) {
    Tensor<double>& t = *p.tensor;
    if (!p.analytic->same_shape(t))
      throw ShapeError("analytic gradient shape mismatch for " + p.name);
    for (int64_t i = 0; i < t.size(); ++i) {
      const double saved = t[i];
      t[i] = saved + h;
      const auto [f_plus, sig_plus] = eval();
      t[i] = saved - h;
      const auto [f_minus, sig_minus] = eval();
      t[i] = saved;
      if (!std::isfinite(f_plus) || !std::isfinite(f_minus))
        throw NumericError("non-finite value during finite differencing");

      GradCoordinate c;
      c.param = p.name;
      c.index = i;
      c.analytic = (*p.analytic)[i];
      c.fd = (f_plus - f_minus) / (2 * h);
      c.rel_err = relative_error(c.analytic, c.fd);
      if (sig_plus != sig_minus) {
        report.flagged.push_back(c);
        continue;
      }
      ++report.coords_checked;
      err_sum += c.rel_err;
      report.max_rel_err = std::max(report.max_rel_err, c.rel_err);
      if (c.rel_err > tol) report.failures.push_back(c);
    }
  }
  if (report.coords_checked > 0)
    report.mean_rel_err = err_sum / static_cast<double>(report.coords_checked);
  return report;
}

// Flattens encoder parameters and their analytic gradients into paired refs.
inline std::vector<ParamRef> collect_param_refs(EncoderParams<double>& params,
                                                EncoderParams<double>& grads) {
  std::vector<ParamRef> refs;
  std::vector<std::pair<std::string, Tensor<double>*>> ps, gs;
  params.for_each_param([&](const std::string& n, Tensor<double>& t) {
    ps.emplace_back(n, &t);
  });
  grads.for_each_param([&](const std::string& n, Tensor<double>& t) {
    gs.emplace_back(n, &t);
  });
  if (ps.size() != gs.size())
    throw StateError("parameter/gradient structure mismatch");
  for (size_t i = 0; i < ps.size(); ++i) {
    if (ps[i].first != gs[i].first)
      throw StateError("parameter/gradient name mismatch at " + ps[i].first);
    refs.push_back({ps[i].first, ps[i].second, gs[i].second});
  }
  return refs;
}

// Checks every encoder parameter of the cross-entropy loss on one example.
inline GradReport grad_check_encoder(const Example& ex,
                                     EncoderParams<double>& params,
                                     const EncoderConfig& cfg, double h = 1e-5,
                                     double tol = 1e-4) {
  EncoderParams<double> grads = EncoderParams<double>::zeros(cfg);
  model_loss_backward(ex, params, cfg, nullptr, grads);
  auto refs = collect_param_refs(params, grads);
  auto eval = [&]() {
    EvalOutcome out = model_loss(ex, params, cfg);
    return std::make_pair(out.loss, out.signature);
  };
  return fd_check(refs, eval, h, tol);
}

}  // namespace ponet
