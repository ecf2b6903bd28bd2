#pragma once

// Run configuration (INI file, one section per module), and the train / eval / sweep /
// export commands behind the command-line tool.

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "dtvec/baselines.hpp"
#include "dtvec/environment.hpp"
#include "dtvec/error.hpp"
#include "dtvec/mamo.hpp"
#include "dtvec/scenario.hpp"
#include "dtvec/twin_metrics.hpp"
#include "dtvec/v2i_channel.hpp"

namespace dtvec {

struct ExperimentOptions {
   int eval_episodes = 20;
   std::uint64_t eval_seed = 1000;
   Weights eval_weights{0.5, 0.5};
   std::vector< double > sweep_bandwidth{1.0e6, 1.5e6, 2.0e6, 2.5e6, 3.0e6};
   std::vector< int > sweep_required_info{3, 4, 5, 6, 7};
   std::vector< std::uint64_t > sweep_scenario_seeds{1, 2, 3, 4, 5};
   std::string checkpoint;  // policy for eval / sweep; empty means train or use RA
   std::string out = "run";
};

struct RunConfig {
   DeskScenarioOptions scenario;
   ChannelParams channel;
   MetricWeights metric_weights;
   EnvironmentConfig environment;
   TrainingConfig training;
   std::string profile = "full";
   AlgorithmMode mode = AlgorithmMode::mamo;
   ExperimentOptions experiment;

   EnvironmentSetup setup() const {
      return {std::make_shared< const Scenario >(make_desk_scenario(scenario)), channel, metric_weights, environment};
   }

   void validate() const {
      channel.validate();
      metric_weights.validate();
      environment.validate();
      training.validate();
      if(experiment.eval_episodes < 1) {
         throw ConfigError("experiment: eval_episodes must be >= 1");
      }
      if(!scenario.trajectory_csv.empty() && !std::filesystem::exists(scenario.trajectory_csv)) {
         throw ConfigError("scenario: trajectory file " + scenario.trajectory_csv + " does not exist");
      }
   }
};

namespace detail {

template < typename T >
std::string join(const std::vector< T >& v) {
   std::ostringstream os;
   for(std::size_t i = 0; i < v.size(); ++i) {
      if(i) {
         os << ',';
      }
      if constexpr(std::is_floating_point_v< T >) {
         os << format_double(v[i]);
      } else {
         os << v[i];
      }
   }
   return os.str();
}

template < typename T >
T parse_scalar(const std::string& key, const std::string& text) {
   std::string t(trim(text));
   if constexpr(std::is_same_v< T, std::string >) {
      return t;
   } else if constexpr(std::is_same_v< T, bool >) {
      if(t == "true" || t == "1" || t == "yes" || t == "on") {
         return true;
      }
      if(t == "false" || t == "0" || t == "no" || t == "off") {
         return false;
      }
      throw ConfigError(key + ": expected a boolean, got '" + t + "'");
   } else {
      T v{};
      const auto* end = t.data() + t.size();
      auto [ptr, ec] = std::from_chars(t.data(), end, v);
      if(ec != std::errc{} || ptr != end) {
         throw ConfigError(key + ": cannot parse '" + t + "'");
      }
      return v;
   }
}

template < typename T >
std::vector< T > parse_list(const std::string& key, const std::string& text) {
   std::vector< T > out;
   for(auto part : split(text, ',')) {
      if(!trim(part).empty()) {
         out.push_back(parse_scalar< T >(key, std::string(part)));
      }
   }
   return out;
}

/// Binds INI keys to fields for reading and for writing the resolved configuration back.
class Binder {
  public:
   template < typename T >
   void bind(const std::string& key, T& field) {
      entries_.push_back(
         {key, [&field, key](const std::string& s) { field = parse_scalar< T >(key, s); },
          [&field] {
             if constexpr(std::is_same_v< T, bool >) {
                return std::string(field ? "true" : "false");
             } else if constexpr(std::is_same_v< T, std::string >) {
                return field;
             } else if constexpr(std::is_floating_point_v< T >) {
                return format_double(field);
             } else {
                return std::to_string(field);
             }
          }});
   }

   template < typename T >
   void bind_list(const std::string& key, std::vector< T >& field) {
      entries_.push_back({key, [&field, key](const std::string& s) { field = parse_list< T >(key, s); },
                          [&field] { return join(field); }});
   }

   void bind_custom(const std::string& key, std::function< void(const std::string&) > read, std::function< std::string() > write) {
      entries_.push_back({key, std::move(read), std::move(write)});
   }

   bool has(const std::string& key) const {
      return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.key == key; });
   }

   void read(const std::string& key, const std::string& value) const {
      for(const auto& e : entries_) {
         if(e.key == key) {
            e.read(value);
            return;
         }
      }
      throw ConfigError("unknown configuration key '" + key + "'");
   }

   void write(std::ostream& os) const {
      std::string section;
      for(const auto& e : entries_) {
         const auto dot = e.key.find('.');
         const auto sec = e.key.substr(0, dot);
         if(sec != section) {
            os << (section.empty() ? "" : "\n") << '[' << sec << "]\n";
            section = sec;
         }
         os << e.key.substr(dot + 1) << " = " << e.write() << '\n';
      }
   }

  private:
   struct Entry {
      std::string key;
      std::function< void(const std::string&) > read;
      std::function< std::string() > write;
   };
   std::vector< Entry > entries_;
};

inline Binder bind_all(RunConfig& c) {
   Binder b;
   auto& s = c.scenario;
   b.bind("scenario.vehicles", s.vehicles);
   b.bind("scenario.infos", s.infos);
   b.bind("scenario.entities", s.entities);
   b.bind("scenario.slot_count", s.slot_count);
   b.bind("scenario.slot_duration", s.slot_duration);
   b.bind("scenario.area_width", s.area_width);
   b.bind("scenario.area_height", s.area_height);
   b.bind("scenario.edge_range", s.edge_range);
   b.bind("scenario.bandwidth", s.bandwidth);
   b.bind("scenario.required_info", s.required_info);
   b.bind("scenario.speed_min", s.speed_min);
   b.bind("scenario.speed_max", s.speed_max);
   b.bind("scenario.power_cap", s.power_cap);
   b.bind("scenario.capability_fraction", s.capability_fraction);
   b.bind("scenario.size_min", s.size_min);
   b.bind("scenario.size_max", s.size_max);
   b.bind("scenario.interval_min", s.interval_min);
   b.bind("scenario.interval_max", s.interval_max);
   b.bind("scenario.freq_min_lo", s.freq_min_lo);
   b.bind("scenario.freq_min_hi", s.freq_min_hi);
   b.bind("scenario.freq_span_lo", s.freq_span_lo);
   b.bind("scenario.freq_span_hi", s.freq_span_hi);
   b.bind("scenario.cost_min", s.cost_min);
   b.bind("scenario.cost_max", s.cost_max);
   b.bind("scenario.trajectory_padding", s.trajectory_padding);
   b.bind("scenario.trajectory_csv", s.trajectory_csv);
   b.bind("scenario.seed", s.seed);

   auto& ch = c.channel;
   b.bind("v2i_channel.noise_power", ch.noise_power);
   b.bind("v2i_channel.antenna_const", ch.antenna_const);
   b.bind("v2i_channel.pathloss_exp", ch.pathloss_exp);
   b.bind("v2i_channel.fading_mean", ch.fading_mean);
   b.bind("v2i_channel.fading_var", ch.fading_var);
   b.bind("v2i_channel.snr_target", ch.snr_target);
   b.bind("v2i_channel.reliability", ch.reliability);

   auto& mw = c.metric_weights;
   b.bind("twin_metrics.w1", mw.w1);
   b.bind("twin_metrics.w2", mw.w2);
   b.bind("twin_metrics.w3", mw.w3);
   b.bind("twin_metrics.w4", mw.w4);
   b.bind("twin_metrics.w5", mw.w5);
   b.bind("twin_metrics.epsilon", c.environment.normalization_epsilon);

   auto& e = c.environment;
   b.bind("environment.upload_cv", e.upload_cv);
   b.bind("environment.steady_state_margin", e.steady_state_margin);
   b.bind("environment.edge_random_candidates", e.edge_random_candidates);
   b.bind("environment.transmission_horizon", e.transmission_horizon);
   b.bind("environment.min_distance", e.min_distance);

   auto& t = c.training;
   b.bind_list("neural.policy_hidden", t.policy_hidden);
   b.bind_list("neural.critic_hidden", t.critic_hidden);
   b.bind("neural.policy_lr", t.policy_lr);
   b.bind("neural.critic_lr", t.critic_lr);
   b.bind("neural.random_actions", t.random_actions);
   b.bind("neural.dueling", t.dueling);

   b.bind("mamo.gamma", t.gamma);
   b.bind("mamo.batch_size", t.batch_size);
   b.bind("mamo.buffer_capacity", t.buffer_capacity);
   b.bind("mamo.soft_update_vehicle", t.soft_update_vehicle);
   b.bind("mamo.soft_update_edge", t.soft_update_edge);
   b.bind("mamo.target_period", t.target_period);
   b.bind("mamo.actor_sync_period", t.actor_sync_period);
   b.bind("mamo.actors", t.actors);
   b.bind("mamo.exploration_start", t.exploration_start);
   b.bind("mamo.exploration_end", t.exploration_end);
   b.bind("mamo.iterations", t.iterations);
   b.bind("mamo.update_every", t.update_every);
   b.bind("mamo.warmup", t.warmup);
   b.bind("mamo.resample_weights", t.resample_weights);
   b.bind("mamo.sync_from_targets", t.sync_from_targets);
   b.bind("mamo.single_thread", t.single_thread);
   b.bind("mamo.seed", t.seed);

   b.bind_custom(
      "baselines.mode", [&c](const std::string& v) { c.mode = parse_mode(std::string(detail::trim(v))); },
      [&c] { return std::string(to_string(c.mode)); });
   b.bind_custom(
      "baselines.fixed_weight_quality",
      [&c](const std::string& v) {
         const double q = parse_scalar< double >("baselines.fixed_weight_quality", v);
         c.training.fixed_weights = {q, 1.0 - q};
      },
      [&c] { return format_double(c.training.fixed_weights.quality); });

   auto& x = c.experiment;
   b.bind("experiment.eval_episodes", x.eval_episodes);
   b.bind("experiment.eval_seed", x.eval_seed);
   b.bind_custom(
      "experiment.eval_weight_quality",
      [&c](const std::string& v) {
         const double q = parse_scalar< double >("experiment.eval_weight_quality", v);
         c.experiment.eval_weights = {q, 1.0 - q};
      },
      [&c] { return format_double(c.experiment.eval_weights.quality); });
   b.bind_list("experiment.sweep_bandwidth", x.sweep_bandwidth);
   b.bind_list("experiment.sweep_required_info", x.sweep_required_info);
   b.bind_list("experiment.sweep_scenario_seeds", x.sweep_scenario_seeds);
   b.bind("experiment.checkpoint", x.checkpoint);
   b.bind("experiment.out", x.out);
   return b;
}

}  // namespace detail

/// Paper hyperparameters unless `profile = desk` is given, which swaps in the desk-scale
/// training values before the remaining keys are applied.
inline RunConfig parse_run_config(std::istream& in) {
   namespace pt = boost::property_tree;
   pt::ptree tree;
   try {
      pt::ini_parser::read_ini(in, tree);
   } catch(const pt::ini_parser_error& e) {
      throw ParseError("config: " + e.message(), e.line());
   }
   RunConfig c;
   if(auto p = tree.get_optional< std::string >("experiment.profile")) {
      c.profile = std::string(detail::trim(*p));
      if(c.profile == "desk") {
         c.training = TrainingConfig::desk();
      } else if(c.profile != "full") {
         throw ConfigError("experiment.profile must be 'full' or 'desk'");
      }
   }
   const auto binder = detail::bind_all(c);
   for(const auto& [section, body] : tree) {
      if(body.empty() && !body.data().empty()) {
         throw ConfigError("config: key '" + section + "' outside any section");
      }
      for(const auto& [key, value] : body) {
         const auto full = section + "." + key;
         if(full == "experiment.profile") {
            continue;
         }
         binder.read(full, value.data());
      }
   }
   return c;
}

inline RunConfig load_run_config(const std::string& path) {
   std::ifstream in(path);
   if(!in) {
      throw ConfigError("cannot open config file " + path);
   }
   return parse_run_config(in);
}

/// Every key with its resolved value; feeding this back reproduces the configuration.
inline void write_run_config(std::ostream& os, const RunConfig& cfg) {
   RunConfig copy = cfg;
   const auto binder = detail::bind_all(copy);
   std::ostringstream body;
   binder.write(body);
   // profile is applied before the other keys, so it goes first.
   std::string text = body.str();
   const auto pos = text.find("[experiment]\n");
   text.insert(pos + std::string("[experiment]\n").size(), "profile = " + cfg.profile + "\n");
   os << text;
}

// ---------------------------------------------------------------------------
// Commands.

namespace detail {

inline std::filesystem::path ensure_dir(const std::string& dir) {
   std::filesystem::path p(dir);
   std::error_code ec;
   std::filesystem::create_directories(p, ec);
   if(ec) {
      throw Error("cannot create output directory " + dir + ": " + ec.message());
   }
   return p;
}

inline std::ofstream open_out(const std::filesystem::path& p) {
   std::ofstream os(p, std::ios::binary);
   if(!os) {
      throw Error("cannot write " + p.string());
   }
   return os;
}

}  // namespace detail

struct TrainArtifacts {
   AlgorithmRun run;
   EvaluationSummary evaluation;
   std::filesystem::path dir;
};

/// Trains the configured mode and writes train_log.jsonl, checkpoint.bin (learned modes),
/// config.ini (resolved), eval_summary.json and eval_metrics.csv.
inline TrainArtifacts cmd_train(const RunConfig& cfg, std::ostream* progress = nullptr) {
   cfg.validate();
   const auto setup = cfg.setup();
   const auto dir = detail::ensure_dir(cfg.experiment.out);
   {
      auto os = detail::open_out(dir / "config.ini");
      write_run_config(os, cfg);
   }
   auto log = detail::open_out(dir / "train_log.jsonl");
   TrainCallbacks cb;
   cb.on_iteration = [&](const IterationLog& l) {
      log << to_json(l).dump() << '\n';
      if(progress && (l.iteration % 25 == 0 || l.iteration + 1 == cfg.training.iterations)) {
         *progress << "iteration " << l.iteration << " return " << format_double(l.scalarized) << '\n' << std::flush;
      }
   };
   TrainArtifacts a;
   a.dir = dir;
   a.run = run_algorithm(cfg.mode, cfg.training, setup, cb);
   log.close();
   if(!a.run.networks.empty()) {
      nlohmann::json meta = {{"mode", to_string(cfg.mode)}, {"iterations", cfg.training.iterations}};
      save_checkpoint((dir / "checkpoint.bin").string(), a.run.networks, meta);
   }
   auto metrics = detail::open_out(dir / "eval_metrics.csv");
   write_metric_csv_header(metrics);
   a.evaluation = evaluate_policy(
      setup, a.run.policy, cfg.experiment.eval_weights, cfg.experiment.eval_episodes, cfg.experiment.eval_seed, &metrics);
   auto summary = detail::open_out(dir / "eval_summary.json");
   auto j = to_json(a.evaluation);
   j["mode"] = to_string(cfg.mode);
   summary << j.dump(2) << '\n';
   return a;
}

/// Policy for eval/sweep: the checkpoint if one is named, else RA in random mode.
inline JointPolicy resolve_policy(const RunConfig& cfg, const Scenario& sc) {
   if(!cfg.experiment.checkpoint.empty()) {
      return policy_from_checkpoint(load_checkpoint(cfg.experiment.checkpoint), sc);
   }
   if(cfg.mode == AlgorithmMode::random) {
      return random_policy();
   }
   throw ConfigError("eval needs experiment.checkpoint (or --checkpoint) unless mode is random");
}

inline EvaluationSummary cmd_eval(const RunConfig& cfg) {
   cfg.validate();
   const auto setup = cfg.setup();
   const auto policy = resolve_policy(cfg, *setup.scenario);
   const auto dir = detail::ensure_dir(cfg.experiment.out);
   auto metrics = detail::open_out(dir / "eval_metrics.csv");
   write_metric_csv_header(metrics);
   auto s = evaluate_policy(setup, policy, cfg.experiment.eval_weights, cfg.experiment.eval_episodes, cfg.experiment.eval_seed, &metrics);
   auto summary = detail::open_out(dir / "eval_summary.json");
   auto j = to_json(s);
   j["mode"] = cfg.experiment.checkpoint.empty() ? to_string(cfg.mode) : "checkpoint";
   summary << j.dump(2) << '\n';
   return s;
}

enum class SweepAxis { bandwidth, required_info, scenario };

inline SweepAxis parse_axis(const std::string& s) {
   if(s == "bandwidth") {
      return SweepAxis::bandwidth;
   }
   if(s == "required_info") {
      return SweepAxis::required_info;
   }
   if(s == "scenario") {
      return SweepAxis::scenario;
   }
   throw ConfigError("unknown sweep axis '" + s + "' (expected bandwidth, required_info or scenario)");
}

inline const char* to_string(SweepAxis a) {
   switch(a) {
      case SweepAxis::bandwidth: return "bandwidth";
      case SweepAxis::required_info: return "required_info";
      case SweepAxis::scenario: return "scenario";
   }
   return "unknown";
}

struct SweepPoint {
   double value = 0.0;
   EvaluationSummary summary;
};

inline void write_sweep_header(std::ostream& os) {
   os << "axis,value,episodes,twin_slots,system_quality,system_profit,qpuc,ppuq,at,ar,asc,atc,scalarized_return\n";
}

inline void write_sweep_row(std::ostream& os, SweepAxis axis, const SweepPoint& p) {
   const auto& t = p.summary.totals;
   const auto aux = auxiliary_metrics(t);
   auto opt = [](bool ok, double v) { return ok ? format_double(v) : std::string(); };
   os << to_string(axis) << ',' << format_double(p.value) << ',' << p.summary.episodes.size() << ',' << t.count << ','
      << opt(t.count > 0, t.count ? t.sum_qdt / static_cast< double >(t.count) : 0.0) << ','
      << opt(t.count > 0, t.count ? t.sum_pdt / static_cast< double >(t.count) : 0.0) << ','
      << opt(t.sum_cdt > 0.0, t.sum_cdt > 0.0 ? qpuc(t) : 0.0) << ','
      << opt(t.sum_qdt > 0.0, t.sum_qdt > 0.0 ? ppuq(t) : 0.0) << ',' << format_double(aux.average_timeliness) << ','
      << format_double(aux.average_redundancy) << ',' << format_double(aux.average_sensing_cost) << ','
      << format_double(aux.average_transmission_cost) << ',' << format_double(p.summary.scalarized.mean) << '\n';
}

/// Evaluates one policy at every point of `axis`. Without a checkpoint the configured mode
/// is trained once on the base scenario first (random mode needs no training).
inline std::vector< SweepPoint > cmd_sweep(const RunConfig& cfg, SweepAxis axis, std::ostream* progress = nullptr) {
   cfg.validate();
   const auto base = cfg.setup();
   JointPolicy policy;
   if(!cfg.experiment.checkpoint.empty() || cfg.mode == AlgorithmMode::random) {
      policy = resolve_policy(cfg, *base.scenario);
   } else {
      if(progress) {
         *progress << "training " << to_string(cfg.mode) << " on the base scenario\n" << std::flush;
      }
      policy = run_algorithm(cfg.mode, cfg.training, base).policy;
   }
   std::vector< double > values;
   switch(axis) {
      case SweepAxis::bandwidth: values = cfg.experiment.sweep_bandwidth; break;
      case SweepAxis::required_info:
         for(int k : cfg.experiment.sweep_required_info) {
            values.push_back(k);
         }
         break;
      case SweepAxis::scenario:
         for(auto s : cfg.experiment.sweep_scenario_seeds) {
            values.push_back(static_cast< double >(s));
         }
         break;
   }
   const auto dir = detail::ensure_dir(cfg.experiment.out);
   auto os = detail::open_out(dir / (std::string("sweep_") + to_string(axis) + ".csv"));
   write_sweep_header(os);
   std::vector< SweepPoint > out;
   for(double v : values) {
      RunConfig point = cfg;
      switch(axis) {
         case SweepAxis::bandwidth: point.scenario.bandwidth = v; break;
         case SweepAxis::required_info: point.scenario.required_info = static_cast< int >(v); break;
         case SweepAxis::scenario: point.scenario.seed = static_cast< std::uint64_t >(v); break;
      }
      const auto setup = point.setup();
      SweepPoint p{v, evaluate_policy(setup, policy, cfg.experiment.eval_weights, cfg.experiment.eval_episodes, cfg.experiment.eval_seed)};
      write_sweep_row(os, axis, p);
      if(progress) {
         *progress << to_string(axis) << ' ' << format_double(v) << " done\n" << std::flush;
      }
      out.push_back(std::move(p));
   }
   return out;
}

/// Writes plot-ready CSVs next to the run artifacts: convergence.csv from the training log
/// and plot_sweep_<axis>.csv for every sweep table present. Returns the files written.
inline std::vector< std::filesystem::path > cmd_export_plots(const std::string& run_dir) {
   namespace fs = std::filesystem;
   const fs::path dir(run_dir);
   if(!fs::is_directory(dir)) {
      throw Error("run directory " + run_dir + " does not exist");
   }
   std::vector< fs::path > written;
   const auto log_path = dir / "train_log.jsonl";
   bool found = false;
   if(fs::exists(log_path)) {
      found = true;
      std::ifstream in(log_path);
      auto os = detail::open_out(dir / "convergence.csv");
      os << "iteration,scalarized_return,reward_quality,reward_profit,qpuc,ppuq,critic_loss_vehicle,critic_loss_edge\n";
      std::string line;
      std::size_t n = 0;
      while(std::getline(in, line)) {
         ++n;
         if(detail::trim(line).empty()) {
            continue;
         }
         const auto j = nlohmann::json::parse(line, nullptr, false);
         if(j.is_discarded()) {
            throw ParseError("train_log.jsonl: malformed line", n);
         }
         auto num = [&](const char* k) {
            return j.contains(k) && j[k].is_number() ? format_double(j[k].get< double >()) : std::string();
         };
         os << j.at("iteration").get< int >() << ',' << num("scalarized_return") << ',' << num("reward_quality") << ','
            << num("reward_profit") << ',' << num("qpuc") << ',' << num("ppuq") << ',' << num("critic_loss_vehicle")
            << ',' << num("critic_loss_edge") << '\n';
      }
      written.push_back(dir / "convergence.csv");
   }
   for(const char* axis : {"bandwidth", "required_info", "scenario"}) {
      const auto src = dir / (std::string("sweep_") + axis + ".csv");
      if(!fs::exists(src)) {
         continue;
      }
      found = true;
      std::ifstream in(src);
      auto os = detail::open_out(dir / (std::string("plot_sweep_") + axis + ".csv"));
      std::string line;
      std::getline(in, line);
      os << axis << ",qpuc,ppuq,at,ar,asc,atc\n";
      while(std::getline(in, line)) {
         const auto f = detail::split(line, ',');
         if(f.size() < 12) {
            throw ParseError(src.string() + ": short row", 0);
         }
         os << f[1] << ',' << f[6] << ',' << f[7] << ',' << f[8] << ',' << f[9] << ',' << f[10] << ',' << f[11] << '\n';
      }
      written.push_back(dir / (std::string("plot_sweep_") + axis + ".csv"));
   }
   if(!found) {
      throw Error("no training log or sweep table in " + run_dir);
   }
   return written;
}

}  // namespace dtvec
