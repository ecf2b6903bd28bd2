#pragma once

// Comparison algorithms on the same environment and metric code: uniform random actions,
// a single centralized agent with fixed weights, and the multi-agent learner with fixed
// weights and a plain critic.

#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "dtvec/environment.hpp"
#include "dtvec/error.hpp"
#include "dtvec/mamo.hpp"
#include "dtvec/neural.hpp"

namespace dtvec {

enum class AlgorithmMode { mamo, random, centralized, multiagent_fixed };

inline const char* to_string(AlgorithmMode m) {
   switch(m) {
      case AlgorithmMode::mamo: return "mamo";
      case AlgorithmMode::random: return "random";
      case AlgorithmMode::centralized: return "centralized";
      case AlgorithmMode::multiagent_fixed: return "multiagent-fixed";
   }
   return "unknown";
}

inline AlgorithmMode parse_mode(const std::string& s) {
   if(s == "mamo") {
      return AlgorithmMode::mamo;
   }
   if(s == "random") {
      return AlgorithmMode::random;
   }
   if(s == "centralized") {
      return AlgorithmMode::centralized;
   }
   if(s == "multiagent-fixed") {
      return AlgorithmMode::multiagent_fixed;
   }
   throw ConfigError("unknown mode '" + s + "' (expected mamo, random, centralized or multiagent-fixed)");
}

/// Uniform draw over the raw action cube for every agent.
template < typename Rng >
RawJointAction ra_action(const World& w, Rng& rng) {
   std::uniform_real_distribution< double > u(0.0, 1.0);
   RawJointAction a;
   const auto n = vehicle_action_size(w.sc());
   for(std::size_t s = 0; s < w.vehicle_count(); ++s) {
      std::vector< double > v(n);
      for(auto& x : v) {
         x = u(rng);
      }
      a.vehicles.push_back(std::move(v));
   }
   a.edge.resize(edge_action_size(w.sc()));
   for(auto& x : a.edge) {
      x = u(rng);
   }
   return a;
}

inline JointPolicy random_policy() {
   return [](const World& w, std::mt19937_64& rng) { return ra_action(w, rng); };
}

// ---------------------------------------------------------------------------
// Centralized agent: observes every local observation, emits the whole joint raw action.

struct CentralizedDims {
   Dimensions base;
   std::size_t observation() const { return base.vehicles * base.vehicle_obs + base.edge_obs; }
   std::size_t action() const { return base.vehicles * base.vehicle_action + base.edge_action; }
};

inline Vector centralized_observation(const World& w) {
   std::vector< Vector > parts;
   for(std::size_t s = 0; s < w.vehicle_count(); ++s) {
      parts.push_back(detail::to_vector(observe_vehicle(w, s).features));
   }
   parts.push_back(detail::to_vector(observe_edge(w).features));
   return detail::concat(parts);
}

inline RawJointAction split_centralized_action(const std::vector< double >& a, const Dimensions& d) {
   RawJointAction out;
   std::size_t i = 0;
   for(std::size_t s = 0; s < d.vehicles; ++s) {
      out.vehicles.emplace_back(a.begin() + static_cast< std::ptrdiff_t >(i),
                                a.begin() + static_cast< std::ptrdiff_t >(i + d.vehicle_action));
      i += d.vehicle_action;
   }
   out.edge.assign(a.begin() + static_cast< std::ptrdiff_t >(i), a.end());
   return out;
}

inline JointPolicy centralized_policy(std::shared_ptr< const MlpParams > policy, Dimensions d, double noise) {
   return [policy = std::move(policy), d, noise](const World& w, std::mt19937_64& rng) {
      return split_centralized_action(act_vehicle(*policy, centralized_observation(w), noise, rng), d);
   };
}

struct CentralizedTransition {
   Vector obs;
   Vector action;
   RewardVector reward;
   Vector next_obs;
   bool terminal = false;
};

struct CentralizedLearner {
   CentralizedDims dims;
   AgentNetworks net;
   std::uint64_t steps = 0;
};

// ---------------------------------------------------------------------------

/// What every algorithm run hands back: its greedy joint policy, the per-iteration
/// history and whatever networks it learned.
struct AlgorithmRun {
   AlgorithmMode mode = AlgorithmMode::mamo;
   JointPolicy policy;
   std::vector< IterationLog > history;
   NamedNetworks networks;
};

namespace detail {

inline AlgorithmRun run_random(const TrainingConfig& cfg, const EnvironmentSetup& setup, const TrainCallbacks& cb) {
   AlgorithmRun run;
   run.mode = AlgorithmMode::random;
   run.policy = random_policy();
   auto rng = stream_rng(cfg.seed, 2);
   for(int it = 0; it < cfg.iterations; ++it) {
      const auto r = run_episode(setup, run.policy, training_episode_seed(cfg.seed, it), cfg.fixed_weights, it, rng);
      run.history.push_back(make_log(it, cfg.fixed_weights, 0.0, r, 0.0, 0.0, 0, 0, 0));
      if(cb.on_iteration) {
         cb.on_iteration(run.history.back());
      }
   }
   return run;
}

inline AlgorithmRun run_centralized(const TrainingConfig& cfg, const EnvironmentSetup& setup, const TrainCallbacks& cb) {
   const CentralizedDims d{Dimensions::from(*setup.scenario)};
   auto init_rng = stream_rng(cfg.seed, 1);
   auto actor_rng = stream_rng(cfg.seed, 2);
   auto learner_rng = stream_rng(cfg.seed, 3);
   TrainingConfig plain = cfg;
   plain.dueling = false;
   CentralizedLearner L{d, AgentNetworks::create(d.observation(), d.action(), d.observation(), 0, plain, init_rng), 0};
   std::vector< CentralizedTransition > ring;
   std::size_t next = 0;
   MlpParams actor = cfg.sync_from_targets ? L.net.target_policy : L.net.policy;
   const Weights w = cfg.fixed_weights;
   AlgorithmRun run;
   run.mode = AlgorithmMode::centralized;
   std::uint64_t env_steps = 0;
   const Matrix no_random(static_cast< Eigen::Index >(d.action()), 0);

   for(int it = 0; it < cfg.iterations; ++it) {
      World world = setup.make(training_episode_seed(cfg.seed, it), w, it);
      const double eps = cfg.exploration(it);
      RewardVector total;
      MetricTotals totals;
      double lv = 0.0;
      std::size_t nsteps = 0;
      while(!world.done()) {
         CentralizedTransition t;
         t.obs = centralized_observation(world);
         const auto raw = act_vehicle(actor, t.obs, eps, actor_rng);
         t.action = to_vector(raw);
         auto split = split_centralized_action(raw, d.base);
         const auto joint = decode_joint_action(world, std::move(split.vehicles), std::move(split.edge));
         const auto sr = step(world, joint, {false, false});
         t.reward = sr.outcome.reward;
         t.terminal = world.done();
         t.next_obs = centralized_observation(world);
         total.quality += t.reward.quality;
         total.profit += t.reward.profit;
         totals.add(sr.outcome.records);
         if(ring.size() < cfg.buffer_capacity) {
            ring.push_back(std::move(t));
         } else {
            ring[next] = std::move(t);
         }
         next = (next + 1) % cfg.buffer_capacity;
         ++env_steps;
         if(ring.size() < cfg.effective_warmup() || env_steps % static_cast< std::uint64_t >(cfg.update_every) != 0) {
            continue;
         }
         // Minibatch of distinct indices.
         std::vector< std::size_t > idx(ring.size());
         std::iota(idx.begin(), idx.end(), 0);
         for(std::size_t k = 0; k < cfg.batch_size; ++k) {
            const auto j = std::uniform_int_distribution< std::size_t >(k, idx.size() - 1)(learner_rng);
            std::swap(idx[k], idx[j]);
         }
         const auto M = static_cast< Eigen::Index >(cfg.batch_size);
         Matrix obs(static_cast< Eigen::Index >(d.observation()), M);
         Matrix nobs(obs.rows(), M);
         Matrix act(static_cast< Eigen::Index >(d.action()), M);
         for(Eigen::Index m = 0; m < M; ++m) {
            const auto& tr = ring[idx[static_cast< std::size_t >(m)]];
            obs.col(m) = tr.obs;
            nobs.col(m) = tr.next_obs;
            act.col(m) = tr.action;
         }
         const Matrix empty(0, M);
         const Matrix nact = mlp_forward(L.net.target_policy, nobs);
         const Matrix qn = dueling_forward(L.net.target_critic, nobs, nact, empty, no_random).q;
         Matrix y(1, M);
         for(Eigen::Index m = 0; m < M; ++m) {
            const auto& tr = ring[idx[static_cast< std::size_t >(m)]];
            y(0, m) = td_target(tr.reward, w, cfg.gamma, qn(0, m), tr.terminal);
         }
         lv += fit_critic(L.net, obs, act, empty, no_random, y);
         MlpCache cache;
         const Matrix a = mlp_forward(L.net.policy, obs, &cache);
         const Matrix dqda = critic_action_gradient(L.net.critic, obs, a, empty);
         optimizer_step(L.net.policy_opt, L.net.policy, mlp_backward(L.net.policy, cache, -dqda / static_cast< double >(M)));
         ++L.steps;
         ++nsteps;
         if(L.steps % static_cast< std::uint64_t >(cfg.target_period) == 0) {
            L.net.soft_update_targets(cfg.soft_update_vehicle);
         }
         if(L.steps % static_cast< std::uint64_t >(cfg.actor_sync_period) == 0) {
            actor = cfg.sync_from_targets ? L.net.target_policy : L.net.policy;
         }
      }
      run.history.push_back(make_log(it, world.weights, eps, finish_episode(total, w, totals), lv, 0.0, nsteps, L.steps, ring.size()));
      if(cb.on_iteration) {
         cb.on_iteration(run.history.back());
      }
   }
   run.policy = centralized_policy(std::make_shared< const MlpParams >(L.net.policy), d.base, 0.0);
   run.networks = {{"central.policy", L.net.policy},
                   {"central.policy_target", L.net.target_policy},
                   {"central.critic", L.net.critic.advantage}};
   return run;
}

}  // namespace detail

/// Runs `mode` for `cfg.iterations` episodes. The fixed-weight modes override the
/// weight sampling (and, for the multi-agent one, the dueling head) of `cfg`.
inline AlgorithmRun run_algorithm(
   AlgorithmMode mode, const TrainingConfig& cfg, const EnvironmentSetup& setup, const TrainCallbacks& cb = {}) {
   cfg.validate();
   if(!setup.scenario) {
      throw ConfigError("no scenario");
   }
   setup.scenario->validate();
   switch(mode) {
      case AlgorithmMode::random: return detail::run_random(cfg, setup, cb);
      case AlgorithmMode::centralized: {
         if(!cfg.single_thread) {
            throw ConfigError("centralized mode runs single-threaded only");
         }
         auto c = cfg;
         c.resample_weights = false;
         return detail::run_centralized(c, setup, cb);
      }
      case AlgorithmMode::multiagent_fixed:
      case AlgorithmMode::mamo: {
         auto c = cfg;
         if(mode == AlgorithmMode::multiagent_fixed) {
            c.dueling = false;
            c.resample_weights = false;
         }
         auto tr = train(c, setup, cb);
         AlgorithmRun run;
         run.mode = mode;
         run.policy = greedy_policy(tr.learner);
         run.history = std::move(tr.history);
         run.networks = tr.learner.networks();
         return run;
      }
   }
   throw ConfigError("unknown mode");
}

/// Greedy joint policy rebuilt from a checkpoint of any learned mode.
inline JointPolicy policy_from_checkpoint(const Checkpoint& ck, const Scenario& sc) {
   const auto d = Dimensions::from(sc);
   if(auto it = ck.networks.find("central.policy"); it != ck.networks.end()) {
      const CentralizedDims cd{d};
      if(it->second.input_size() != cd.observation() || it->second.output_size() != cd.action()) {
         throw DimensionError("checkpoint policy does not fit this scenario");
      }
      return centralized_policy(std::make_shared< const MlpParams >(it->second), d, 0.0);
   }
   return snapshot_policy(std::make_shared< const PolicySnapshot >(policies_from_checkpoint(ck, d)), 0.0);
}

}  // namespace dtvec
