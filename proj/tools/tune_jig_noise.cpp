// Finds the flux noise level at which the simulated jig reproduces a target
// mean torque RMSE, by bisection. The result is meant to be frozen into the
// bundled configs.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "amphibot/plant.hpp"

using namespace amphibot;

namespace {

struct Errors {
  double torque = 0.0;
  double force = 0.0;
};

Errors jig_errors(plant::Scenario sc, double sigma) {
  sc.sensing.flux_noise_mt = sigma;
  auto cal = plant::calibrate_sensors(sc);
  Errors e;
  for (const auto& r : cal.foot_reports) {
    e.torque += 0.5 * (r.at("tau_pitch") + r.at("tau_yaw")) / plant::kFeet;
    e.force += r.at("f_x") / plant::kFeet;
  }
  return e;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tune the jig flux noise against a torque RMSE target"};
  std::string path;
  double target = std::sqrt(1.26 * 2.5);
  double lo = 1e-4, hi = 2e-2;
  int iters = 30;
  app.add_option("jig", path, "jig JSON")->required();
  app.add_option("--target", target, "mean torque RMSE to hit, N*mm")->capture_default_str();
  app.add_option("--lo", lo, "lower noise bracket, mT")->capture_default_str();
  app.add_option("--hi", hi, "upper noise bracket, mT")->capture_default_str();
  app.add_option("--iters", iters, "bisection steps")->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  try {
    std::ifstream in(path);
    if (!in) throw Error("cannot open '" + path + "'");
    plant::Scenario sc = plant::Scenario::from_json(nlohmann::json::parse(in));
    if (jig_errors(sc, lo).torque > target || jig_errors(sc, hi).torque < target)
      throw Error("target is not bracketed by [lo, hi]");
    for (int i = 0; i < iters; ++i) {
      double mid = std::sqrt(lo * hi);
      (jig_errors(sc, mid).torque < target ? lo : hi) = mid;
    }
    double sigma = std::sqrt(lo * hi);
    Errors e = jig_errors(sc, sigma);
    std::printf("flux_noise_mt %.4g  torque %.4f N*mm  force %.4f N\n", sigma, e.torque, e.force);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
