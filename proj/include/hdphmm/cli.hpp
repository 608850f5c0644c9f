#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "hdphmm/count_data.hpp"
#include "hdphmm/errors.hpp"
#include "hdphmm/evaluation.hpp"
#include "hdphmm/gibbs.hpp"
#include "hdphmm/serialize.hpp"
#include "hdphmm/synthesis.hpp"
#include "hdphmm/vb.hpp"

namespace hdphmm::cli {

inline constexpr const char* kVersion = "0.1.0";

namespace detail {

inline const json& require(const json& j, const std::string& field) {
  if (!j.contains(field)) {
    throw ValidationError("config is missing required field '" + field + "'");
  }
  return j.at(field);
}

template <typename T>
T get_or(const json& j, const std::string& field, T fallback) {
  if (!j.contains(field)) return fallback;
  try {
    return j.at(field).get<T>();
  } catch (const std::exception&) {
    throw ValidationError("config field '" + field + "' has the wrong type");
  }
}

inline GammaHyper gamma_hyper_from(const json& j, GammaHyper fallback) {
  GammaHyper h{get_or(j, "a", fallback.a), get_or(j, "b", fallback.b)};
  h.validate();
  return h;
}

inline SplitSpec split_from(const json& j) {
  SplitSpec s;
  s.t_train = require(j, "t_train").get<Eigen::Index>();
  s.t_test = require(j, "t_test").get<Eigen::Index>();
  return s;
}

inline void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir);
}

inline void write_manifest(const std::string& command, const json& resolved,
                           std::uint64_t seed, const std::string& out_dir) {
  json m;
  m["command"] = command;
  m["version"] = kVersion;
  m["seed"] = seed;
  m["config"] = resolved;
  write_json_file(m, out_dir + "/manifest.json");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// simulate

inline void cmd_simulate(const json& config, const std::string& out_dir) {
  SimConfig sim;
  sim.C = detail::get_or(config, "C", sim.C);
  sim.T = detail::get_or(config, "T", sim.T);
  sim.M = detail::get_or(config, "M", sim.M);
  sim.alpha0 = detail::get_or(config, "alpha0", sim.alpha0);
  sim.gamma = detail::get_or(config, "gamma", sim.gamma);
  sim.seed = detail::get_or<std::uint64_t>(config, "seed", 0);
  double bin_width = detail::get_or(config, "bin_width", 0.25);
  if (config.contains("rate_prior")) {
    sim.rate_prior = detail::gamma_hyper_from(config.at("rate_prior"), sim.rate_prior);
  }
  if (config.contains("spatial")) {
    SpatialConfig sp;
    sp.arena_radius_cm =
        detail::get_or(config.at("spatial"), "arena_radius_cm", sp.arena_radius_cm);
    sp.jitter_cm = detail::get_or(config.at("spatial"), "jitter_cm", sp.jitter_cm);
    sim.spatial = sp;
  }
  if (config.contains("nb_noise")) {
    NbNoiseConfig nb;
    nb.mean = detail::get_or(config.at("nb_noise"), "mean", nb.mean);
    nb.variance = detail::get_or(config.at("nb_noise"), "variance", nb.variance);
    sim.nb_noise = nb;
  }
  sim.validate();
  detail::ensure_dir(out_dir);

  RngHandle rng(sim.seed, 0);
  auto [hmm, hdp] = sample_hdp_hmm(rng, sim);
  StateSequence seq;
  CountMatrix counts;
  if (sim.spatial) {
    SpatialDataset ds = simulate_spatial(rng, hmm, sim.T, *sim.spatial, bin_width);
    seq = std::move(ds.seq);
    counts = std::move(ds.counts);
    save_positions(ds.positions, out_dir + "/positions.csv");
  } else {
    auto [s, c] = simulate(rng, hmm, sim.T, bin_width);
    seq = std::move(s);
    counts = std::move(c);
  }
  if (sim.nb_noise) {
    counts = inject_nb_noise(rng, counts, sim.nb_noise->mean, sim.nb_noise->variance);
  }
  save_counts(counts, out_dir + "/counts.csv");

  json echo;
  echo["C"] = sim.C;
  echo["T"] = sim.T;
  echo["M"] = sim.M;
  echo["alpha0"] = sim.alpha0;
  echo["gamma"] = sim.gamma;
  echo["rate_prior"] = {{"a", sim.rate_prior.a}, {"b", sim.rate_prior.b}};
  echo["bin_width"] = bin_width;
  echo["seed"] = sim.seed;
  if (sim.spatial) {
    echo["spatial"] = {{"arena_radius_cm", sim.spatial->arena_radius_cm},
                       {"jitter_cm", sim.spatial->jitter_cm}};
  }
  if (sim.nb_noise) {
    echo["nb_noise"] = {{"mean", sim.nb_noise->mean},
                        {"variance", sim.nb_noise->variance}};
  }
  write_ground_truth(hmm, hdp, seq, echo, out_dir + "/ground_truth.json");
  detail::write_manifest("simulate", echo, sim.seed, out_dir);
}

// ---------------------------------------------------------------------------
// fit

namespace detail {

struct FitPlan {
  std::string method;
  CountMatrix train;
  std::uint64_t seed = 0;
  json echo;
};

inline void run_one_fit(const FitPlan& plan, const json& config,
                        std::uint64_t chain_stream, const std::string& out_dir) {
  ensure_dir(out_dir);
  const std::string& method = plan.method;
  if (method == "mcmc-hmc" || method == "mcmc-eb") {
    GibbsConfig gc;
    gc.M = get_or(config, "M", 80);
    gc.n_iters = get_or(config, "n_iters", 300);
    gc.hyper_mode = method == "mcmc-hmc" ? HyperMode::hmc : HyperMode::eb;
    gc.n_snapshots = get_or(config, "n_snapshots", 50);
    if (config.contains("rate_prior")) {
      gc.rate_prior = gamma_hyper_from(config.at("rate_prior"), gc.rate_prior);
    }
    if (config.contains("alpha0_prior")) {
      gc.alpha0_prior.a = get_or(config.at("alpha0_prior"), "a", 1.0);
      gc.alpha0_prior.b = get_or(config.at("alpha0_prior"), "b", 1.0);
    }
    if (config.contains("gamma_prior")) {
      gc.gamma_prior.a = get_or(config.at("gamma_prior"), "a", 8.0);
      gc.gamma_prior.b = get_or(config.at("gamma_prior"), "b", 1.0);
    }
    if (config.contains("hmc")) {
      gc.hmc.n_leapfrog = get_or(config.at("hmc"), "n_leapfrog", 10);
      gc.hmc.step_size = get_or(config.at("hmc"), "step_size", 0.1);
      gc.hmc.mass = get_or(config.at("hmc"), "mass", 1.0);
    }
    RngHandle rng(plan.seed, chain_stream);
    ChainTrace trace = run_chain(rng, plan.train, gc);
    write_trace_csv(trace, out_dir + "/trace.csv");
    write_snapshots(trace, out_dir + "/snapshots.json");
  } else if (method == "hmm-mcmc") {
    FiniteHmmConfig fc;
    fc.m = static_cast<int>(require(config, "m").get<int>());
    fc.n_iters = get_or(config, "n_iters", 300);
    fc.hyper_mode = HyperMode::hmc;
    fc.alpha0 = get_or(config, "alpha0", 1.0);
    fc.n_snapshots = get_or(config, "n_snapshots", 50);
    if (config.contains("rate_prior")) {
      fc.rate_prior = gamma_hyper_from(config.at("rate_prior"), fc.rate_prior);
    }
    RngHandle rng(plan.seed, chain_stream);
    ChainTrace trace = run_finite_hmm_chain(rng, plan.train, fc);
    write_trace_csv(trace, out_dir + "/trace.csv");
    write_snapshots(trace, out_dir + "/snapshots.json");
  } else if (method == "vb" || method == "hmm-vb") {
    VbConfig vc;
    vc.finite = method == "hmm-vb";
    vc.M = vc.finite ? static_cast<int>(require(config, "m").get<int>())
                     : get_or(config, "M", 80);
    vc.n_iters = get_or(config, "n_iters", 100);
    vc.alpha0 = get_or(config, "alpha0", 4.0);
    vc.gamma_conc = get_or(config, "gamma", 8.0);
    vc.seed = plan.seed + chain_stream;
    VbResult res = run_vb(plan.train, vc);
    write_vb_factors(res.state, out_dir + "/factors.json");
    write_elbo_csv(res.elbo_trace, out_dir + "/elbo_trace.csv");
  } else {
    throw ValidationError("unknown fit method '" + method + "'");
  }
}

}  // namespace detail

inline void cmd_fit(const json& config, const std::string& out_dir) {
  detail::FitPlan plan;
  plan.method = detail::require(config, "method").get<std::string>();
  if (plan.method != "mcmc-hmc" && plan.method != "mcmc-eb" &&
      plan.method != "vb" && plan.method != "hmm-mcmc" &&
      plan.method != "hmm-vb") {
    throw ValidationError("unknown fit method '" + plan.method + "'");
  }
  std::string counts_path = detail::require(config, "counts").get<std::string>();
  CountMatrix counts = load_counts(counts_path);
  if (config.contains("split")) {
    SplitSpec spec = detail::split_from(config.at("split"));
    plan.train = split(counts, spec).first;
  } else {
    plan.train = counts;
  }
  plan.seed = detail::get_or<std::uint64_t>(config, "seed", 0);
  int chains = detail::get_or(config, "chains", 1);
  if (chains < 1) throw ValidationError("chains must be >= 1");

  detail::ensure_dir(out_dir);
  if (chains == 1) {
    detail::run_one_fit(plan, config, 0, out_dir);
  } else {
    std::vector<std::thread> workers;
    std::vector<std::exception_ptr> failures(static_cast<std::size_t>(chains));
    for (int k = 0; k < chains; ++k) {
      workers.emplace_back([&, k]() {
        try {
          char sub[32];
          std::snprintf(sub, sizeof(sub), "/chain_%02d", k);
          detail::run_one_fit(plan, config, static_cast<std::uint64_t>(k),
                              out_dir + sub);
        } catch (...) {
          failures[static_cast<std::size_t>(k)] = std::current_exception();
        }
      });
    }
    for (auto& w : workers) w.join();
    for (auto& f : failures) {
      if (f) std::rethrow_exception(f);
    }
  }
  json echo = config;
  echo["seed"] = plan.seed;
  echo["chains"] = chains;
  detail::write_manifest("fit", echo, plan.seed, out_dir);
}

// ---------------------------------------------------------------------------
// evaluate / decode shared plumbing

namespace detail {

struct FitArtifacts {
  bool is_mcmc = false;
  LoadedSnapshots snapshots;          // mcmc
  VariationalState vstate;            // vb
  StateSequence final_seq;            // train-time assignment
  int M = 0;
};

inline FitArtifacts load_fit(const std::string& fit_dir) {
  FitArtifacts art;
  if (std::filesystem::exists(fit_dir + "/snapshots.json")) {
    art.is_mcmc = true;
    art.snapshots = load_snapshots(fit_dir + "/snapshots.json");
    art.final_seq = art.snapshots.seqs.back();
    art.M = static_cast<int>(art.snapshots.params.back().n_states());
  } else if (std::filesystem::exists(fit_dir + "/factors.json")) {
    art.vstate = load_vb_factors(fit_dir + "/factors.json");
    art.final_seq = map_state_sequence(art.vstate);
    art.M = static_cast<int>(art.vstate.n_states());
  } else {
    throw FileNotFound("no fit artifacts found in " + fit_dir);
  }
  return art;
}

/// Smoothed state marginals on a count segment, averaged over posterior
/// samples for MCMC fits or taken from surrogate message passing for VB.
inline Eigen::MatrixXd segment_marginals(const FitArtifacts& art,
                                         const CountMatrix& segment) {
  if (art.is_mcmc) {
    Eigen::MatrixXd avg;
    for (const auto& params : art.snapshots.params) {
      EmissionTable table = emission_logliks(segment, params.Lambda);
      SmoothedMarginals sm = smoothed_marginals(table, params.pi, params.P);
      if (avg.size() == 0) {
        avg = sm.gamma;
      } else {
        avg += sm.gamma;
      }
    }
    avg /= static_cast<double>(art.snapshots.params.size());
    return avg;
  }
  SurrogateHmm s = build_surrogate(art.vstate, segment);
  return hdphmm::detail::smoothed_marginals_log(s.log_pi, s.log_P, s.loglik).gamma;
}

/// Training-side location map: pooled hard assignments across samples for
/// MCMC, the fitted soft marginals for VB.
inline StateLocationMap train_location_map(const FitArtifacts& art,
                                           const PositionTrace& pos_train,
                                           const SpatialBinning& binning) {
  if (art.is_mcmc) {
    Eigen::MatrixXd pooled = Eigen::MatrixXd::Zero(
        static_cast<Eigen::Index>(pos_train.size()), art.M);
    for (const auto& seq : art.snapshots.seqs) {
      pooled += one_hot_marginals(seq, art.M);
    }
    pooled /= static_cast<double>(art.snapshots.seqs.size());
    return state_location_map(pooled, pos_train, binning);
  }
  return state_location_map(art.vstate.gamma, pos_train, binning);
}

inline SpatialBinning binning_from(const json& j, SpatialBinning fallback) {
  SpatialBinning b = fallback;
  b.n_angular = get_or(j, "n_angular", b.n_angular);
  b.n_radial = get_or(j, "n_radial", b.n_radial);
  b.arena_radius_cm = get_or(j, "arena_radius_cm", b.arena_radius_cm);
  return b;
}

}  // namespace detail

inline void cmd_evaluate(const json& config, const std::string& out_dir) {
  CountMatrix counts =
      load_counts(detail::require(config, "counts").get<std::string>());
  SplitSpec spec = detail::split_from(detail::require(config, "split"));
  auto [train, test] = split(counts, spec);
  std::string fit_dir = detail::require(config, "fit").get<std::string>();
  detail::FitArtifacts art = detail::load_fit(fit_dir);
  std::uint64_t seed = detail::get_or<std::uint64_t>(config, "seed", 0);
  int n_draws = detail::get_or(config, "n_draws", 50);

  double baseline = baseline_predictive_ll(test, baseline_rates(train));
  double model_ll;
  if (art.is_mcmc) {
    model_ll = predictive_ll_mcmc(art.snapshots.params, test);
  } else {
    RngHandle rng(seed, 0x5eed);
    model_ll = predictive_ll_vb(art.vstate, n_draws, rng, test);
  }
  json report;
  report["baseline_ll"] = baseline;
  report["model_ll"] = model_ll;
  report["bits_per_spike"] = bits_per_spike(model_ll, baseline, test);
  report["n_states"] = state_count(art.final_seq);
  report["n_states_95"] = coverage_state_count(art.final_seq, art.M, 0.95);

  if (config.contains("positions")) {
    PositionTrace pos =
        load_positions(config.at("positions").get<std::string>());
    PositionTrace pos_train = slice_positions(pos, 0, static_cast<std::size_t>(spec.t_train));
    PositionTrace pos_test = slice_positions(
        pos, static_cast<std::size_t>(spec.t_train), static_cast<std::size_t>(spec.t_test));
    SpatialBinning decode_bins{11, 20, 60.0};
    SpatialBinning mi_bins{11, 11, 60.0};
    if (config.contains("binning")) {
      decode_bins = detail::binning_from(config.at("binning"), decode_bins);
    }
    if (config.contains("mi_binning")) {
      mi_bins = detail::binning_from(config.at("mi_binning"), mi_bins);
    }
    double max_r = *std::max_element(pos.r.begin(), pos.r.end());
    decode_bins.arena_radius_cm = std::max(decode_bins.arena_radius_cm, max_r);
    mi_bins.arena_radius_cm = std::max(mi_bins.arena_radius_cm, max_r);

    StateLocationMap map = detail::train_location_map(art, pos_train, decode_bins);
    Eigen::MatrixXd marg = detail::segment_marginals(art, test);
    DecodedTrajectory traj = decode_positions(
        marg, map, detail::get_or(config, "circular_mean", false),
        detail::get_or(config, "max_uncovered_mass", 0.01));
    DecodeSummary summary = decode_error(traj, pos_test);
    report["decode_mean_cm"] = summary.mean_cm;
    report["decode_sd_cm"] = summary.sd_cm;
    report["mi_bits"] =
        mutual_information(art.final_seq, pos_train, mi_bins, art.M);
  }

  if (config.contains("ground_truth")) {
    GroundTruth gt =
        load_ground_truth(config.at("ground_truth").get<std::string>());
    StateSequence true_train(gt.seq.begin(), gt.seq.begin() + spec.t_train);
    StateMatch match = greedy_state_match(true_train, art.final_seq);
    report["true_n_states"] = state_count(true_train);
    report["matched_bin_fraction"] =
        matched_bin_fraction(match, true_train.size());
    report["n_matched_pairs"] = match.mapping.size();
  }

  detail::ensure_dir(out_dir);
  write_json_file(report, out_dir + "/metrics.json");
  json echo = config;
  detail::write_manifest("evaluate", echo, seed, out_dir);
}

inline void cmd_decode(const json& config, const std::string& out_dir) {
  CountMatrix counts =
      load_counts(detail::require(config, "counts").get<std::string>());
  SplitSpec spec = detail::split_from(detail::require(config, "split"));
  auto [train, test] = split(counts, spec);
  if (!config.contains("positions")) {
    throw ValidationError("decode requires a positions file");
  }
  PositionTrace pos = load_positions(config.at("positions").get<std::string>());
  if (pos.size() != static_cast<std::size_t>(counts.n_bins())) {
    throw LengthMismatch("positions must cover the full count range");
  }
  PositionTrace pos_train = slice_positions(pos, 0, static_cast<std::size_t>(spec.t_train));
  PositionTrace pos_test = slice_positions(
      pos, static_cast<std::size_t>(spec.t_train), static_cast<std::size_t>(spec.t_test));
  detail::FitArtifacts art =
      detail::load_fit(detail::require(config, "fit").get<std::string>());
  std::uint64_t seed = detail::get_or<std::uint64_t>(config, "seed", 0);

  SpatialBinning bins{11, 20, 60.0};
  if (config.contains("binning")) {
    bins = detail::binning_from(config.at("binning"), bins);
  }
  double max_r = *std::max_element(pos.r.begin(), pos.r.end());
  bins.arena_radius_cm = std::max(bins.arena_radius_cm, max_r);

  StateLocationMap map = detail::train_location_map(art, pos_train, bins);
  Eigen::MatrixXd marg = detail::segment_marginals(art, test);
  DecodedTrajectory traj = decode_positions(
      marg, map, detail::get_or(config, "circular_mean", false),
      detail::get_or(config, "max_uncovered_mass", 0.01));
  DecodeSummary summary = decode_error(traj, pos_test);

  detail::ensure_dir(out_dir);
  {
    std::ofstream out(out_dir + "/trajectory.csv");
    if (!out) throw IoError("cannot write trajectory.csv");
    out << "t,r_true,theta_true,r_hat,theta_hat,err_cm\n";
    char buf[256];
    for (std::size_t t = 0; t < pos_test.size(); ++t) {
      std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g,%.17g,%.17g\n", t,
                    pos_test.r[t], pos_test.theta[t], traj.r_hat[t],
                    traj.theta_hat[t], summary.err_cm[t]);
      out << buf;
    }
  }
  int n_shuffles = detail::get_or(config, "n_shuffles", 100);
  RngHandle rng(seed, 0xdec0de);
  json sj;
  sj["mean_cm"] = summary.mean_cm;
  sj["sd_cm"] = summary.sd_cm;
  sj["n_shuffles"] = n_shuffles;
  sj["chance_level_cm"] =
      decode_chance_level(traj, pos_test, n_shuffles, rng, 0.05);
  write_json_file(sj, out_dir + "/decode_summary.json");
  detail::write_manifest("decode", config, seed, out_dir);
}

// ---------------------------------------------------------------------------
// Entry point shared by the tool and the tests

inline int run_command(const std::string& command, const std::string& config_path,
                       std::optional<std::uint64_t> seed_override,
                       std::optional<std::string> out_override) {
  try {
    json config = read_json_file(config_path);
    if (seed_override) config["seed"] = *seed_override;
    std::string out_dir = out_override.value_or(
        detail::get_or<std::string>(config, "out", "."));
    if (command == "simulate") {
      cmd_simulate(config, out_dir);
    } else if (command == "fit") {
      cmd_fit(config, out_dir);
    } else if (command == "evaluate") {
      cmd_evaluate(config, out_dir);
    } else if (command == "decode") {
      cmd_decode(config, out_dir);
    } else {
      throw ValidationError("unknown command '" + command + "'");
    }
    return 0;
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "validation error: %s\n", e.what());
    return 2;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical error: %s\n", e.what());
    return 3;
  } catch (const IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}

}  // namespace hdphmm::cli
