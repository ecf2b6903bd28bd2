#pragma once

// Multi-agent multi-objective learner: shared vehicle policy/critic, edge policy/critic,
// replay, scalarized TD targets, deterministic policy gradients, target and actor syncs.
// Also the rollout/evaluation helpers every policy (learned or not) goes through.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <thread>
#include <vector>

#include "json.hpp"

#include "dtvec/environment.hpp"
#include "dtvec/error.hpp"
#include "dtvec/neural.hpp"
#include "dtvec/twin_metrics.hpp"

namespace dtvec {

struct TrainingConfig {
   double gamma = 0.996;
   std::size_t batch_size = 256;
   std::size_t buffer_capacity = 1'000'000;
   double policy_lr = 1e-4;
   double critic_lr = 1e-4;
   double soft_update_vehicle = 1e-3;
   double soft_update_edge = 1e-3;
   int target_period = 100;      // learner steps between soft updates
   int actor_sync_period = 500;  // learner steps between actor refreshes
   int actors = 4;
   double exploration_start = 0.3;
   double exploration_end = 0.05;
   int random_actions = 16;  // N for the dueling baseline
   std::vector< std::size_t > policy_hidden{256, 128};
   std::vector< std::size_t > critic_hidden{512, 256};
   int iterations = 1000;        // one iteration = one episode
   int update_every = 1;         // environment steps per learner step
   std::size_t warmup = 0;       // transitions before learning starts; 0 means one batch
   bool dueling = true;
   bool resample_weights = true;
   Weights fixed_weights{0.5, 0.5};
   bool sync_from_targets = true;  // actors copy target (not local) policies
   bool single_thread = true;
   std::uint64_t seed = 1;

   /// Values sized for one CPU core and a few minutes of training.
   static TrainingConfig desk() {
      TrainingConfig c;
      c.gamma = 0.9;  // 60-slot episodes; a long horizon made greedy actions saturate
      c.batch_size = 64;
      c.buffer_capacity = 100'000;
      c.policy_lr = 1e-3;
      c.critic_lr = 1e-3;
      c.soft_update_vehicle = 0.01;
      c.soft_update_edge = 0.01;
      c.target_period = 1;
      c.actor_sync_period = 50;
      c.actors = 1;
      c.random_actions = 4;
      c.policy_hidden = {64, 64};
      c.critic_hidden = {128, 64};
      c.iterations = 1000;
      c.update_every = 4;
      return c;
   }

   std::size_t effective_warmup() const { return warmup > 0 ? warmup : batch_size; }

   void validate() const {
      if(!(gamma >= 0.0 && gamma < 1.0)) {
         throw ConfigError("mamo: gamma must lie in [0,1)");
      }
      if(batch_size < 1 || buffer_capacity < batch_size) {
         throw ConfigError("mamo: need 1 <= batch_size <= buffer_capacity");
      }
      if(!(policy_lr > 0.0) || !(critic_lr > 0.0)) {
         throw ConfigError("mamo: learning rates must be positive");
      }
      for(double n : {soft_update_vehicle, soft_update_edge}) {
         if(!(n > 0.0 && n <= 1.0)) {
            throw ConfigError("mamo: soft update rates must lie in (0,1]");
         }
      }
      if(target_period < 1 || actor_sync_period < 1 || actors < 1 || random_actions < 1
         || iterations < 0 || update_every < 1) {
         throw ConfigError("mamo: periods, actor count, N and update_every must be >= 1");
      }
      if(exploration_start < 0.0 || exploration_end < 0.0) {
         throw ConfigError("mamo: exploration scales must be >= 0");
      }
      if(std::abs(fixed_weights.quality + fixed_weights.profit - 1.0) > 1e-9
         || fixed_weights.quality < 0.0 || fixed_weights.profit < 0.0) {
         throw ConfigError("mamo: fixed weights must be non-negative and sum to 1");
      }
   }

   /// Linear decay over iterations.
   double exploration(int iteration) const {
      if(iterations <= 1) {
         return exploration_end;
      }
      const double f = std::clamp(static_cast< double >(iteration) / (iterations - 1), 0.0, 1.0);
      return exploration_start + f * (exploration_end - exploration_start);
   }
};

// ---------------------------------------------------------------------------
// Replay.

struct ReplayTransition {
   std::vector< Vector > vehicle_obs;
   Vector edge_obs;
   Weights weights;
   std::vector< Vector > vehicle_actions;
   Vector edge_action;
   std::vector< RewardVector > vehicle_rewards;
   RewardVector edge_reward;
   std::vector< Vector > next_vehicle_obs;
   Vector next_edge_obs;
   Weights next_weights;
   bool terminal = false;
};

/// Fixed-capacity ring; append and sample are safe to call from several threads.
class ReplayBuffer {
  public:
   explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
      if(capacity == 0) {
         throw ConfigError("replay buffer: capacity must be positive");
      }
   }

   void push(ReplayTransition t) {
      auto p = std::make_shared< const ReplayTransition >(std::move(t));
      std::lock_guard lock(mutex_);
      if(data_.size() < capacity_) {
         data_.push_back(std::move(p));
      } else {
         data_[next_] = std::move(p);
      }
      next_ = (next_ + 1) % capacity_;
   }

   std::size_t size() const {
      std::lock_guard lock(mutex_);
      return data_.size();
   }
   std::size_t capacity() const { return capacity_; }

   /// `m` distinct transitions, uniformly at random (Floyd's selection, ascending index order).
   template < typename Rng >
   std::vector< std::shared_ptr< const ReplayTransition > > sample(std::size_t m, Rng& rng) const {
      std::lock_guard lock(mutex_);
      const std::size_t n = data_.size();
      if(m > n) {
         throw Error("replay buffer: asked for more samples than stored");
      }
      std::set< std::size_t > picked;
      for(std::size_t j = n - m; j < n; ++j) {
         const auto r = std::uniform_int_distribution< std::size_t >(0, j)(rng);
         if(!picked.insert(r).second) {
            picked.insert(j);
         }
      }
      std::vector< std::shared_ptr< const ReplayTransition > > out;
      out.reserve(m);
      for(auto i : picked) {
         out.push_back(data_[i]);
      }
      return out;
   }

  private:
   std::size_t capacity_;
   std::vector< std::shared_ptr< const ReplayTransition > > data_;
   std::size_t next_ = 0;
   mutable std::mutex mutex_;
};

// ---------------------------------------------------------------------------
// Networks.

struct Dimensions {
   std::size_t vehicles = 0;
   std::size_t vehicle_obs = 0;
   std::size_t vehicle_action = 0;
   std::size_t edge_obs = 0;
   std::size_t edge_action = 0;

   static Dimensions from(const Scenario& sc) {
      return {sc.vehicles.size(), vehicle_observation_size(sc), vehicle_action_size(sc),
              edge_observation_size(sc), edge_action_size(sc)};
   }
   std::size_t edge_policy_input() const { return edge_obs + vehicles * vehicle_action; }
   std::size_t vehicle_others() const { return (vehicles - 1) * vehicle_action; }
   std::size_t all_vehicle_actions() const { return vehicles * vehicle_action; }
   bool operator==(const Dimensions&) const = default;
};

struct AgentNetworks {
   MlpParams policy;
   MlpParams target_policy;
   DuelingCritic critic;
   DuelingCritic target_critic;
   OptimizerState policy_opt;
   OptimizerState advantage_opt;
   OptimizerState value_opt;

   template < typename Rng >
   static AgentNetworks create(
      std::size_t policy_in, std::size_t action, std::size_t critic_obs, std::size_t others,
      const TrainingConfig& cfg, Rng& rng) {
      AgentNetworks a;
      std::vector< std::size_t > sizes{policy_in};
      sizes.insert(sizes.end(), cfg.policy_hidden.begin(), cfg.policy_hidden.end());
      sizes.push_back(action);
      a.policy = MlpParams::create(sizes, OutputActivation::logistic, rng);
      a.critic = DuelingCritic::create(critic_obs, action, others, cfg.critic_hidden, cfg.dueling, rng);
      a.target_policy = a.policy;
      a.target_critic = a.critic;
      a.policy_opt = OptimizerState::create(a.policy, {cfg.policy_lr});
      a.advantage_opt = OptimizerState::create(a.critic.advantage, {cfg.critic_lr});
      a.value_opt = OptimizerState::create(a.critic.value, {cfg.critic_lr});
      return a;
   }

   void soft_update_targets(double n) {
      soft_update(target_policy, policy, n);
      soft_update(target_critic.advantage, critic.advantage, n);
      soft_update(target_critic.value, critic.value, n);
   }
};

/// Policies the actors run with; copies, never aliased with the learner.
struct PolicySnapshot {
   MlpParams vehicle;
   MlpParams edge;
};

struct LearnerState {
   Dimensions dims;
   AgentNetworks vehicle;
   AgentNetworks edge;
   std::uint64_t steps = 0;

   template < typename Rng >
   static LearnerState create(const Dimensions& d, const TrainingConfig& cfg, Rng& rng) {
      if(d.vehicles < 1) {
         throw ConfigError("mamo: scenario has no vehicles");
      }
      LearnerState s;
      s.dims = d;
      s.vehicle = AgentNetworks::create(d.vehicle_obs, d.vehicle_action, d.vehicle_obs, d.vehicle_others(), cfg, rng);
      s.edge = AgentNetworks::create(d.edge_policy_input(), d.edge_action, d.edge_obs, d.all_vehicle_actions(), cfg, rng);
      return s;
   }

   PolicySnapshot snapshot(bool from_targets) const {
      return from_targets ? PolicySnapshot{vehicle.target_policy, edge.target_policy}
                          : PolicySnapshot{vehicle.policy, edge.policy};
   }

   NamedNetworks networks() const {
      return {{"vehicle.policy", vehicle.policy},
              {"vehicle.policy_target", vehicle.target_policy},
              {"vehicle.advantage", vehicle.critic.advantage},
              {"vehicle.value", vehicle.critic.value},
              {"edge.policy", edge.policy},
              {"edge.policy_target", edge.target_policy},
              {"edge.advantage", edge.critic.advantage},
              {"edge.value", edge.critic.value}};
   }
};

// ---------------------------------------------------------------------------
// Acting.

namespace detail {

template < typename Rng >
std::vector< double > noisy(const Vector& mean, double noise_scale, Rng& rng) {
   std::vector< double > a(static_cast< std::size_t >(mean.size()));
   std::normal_distribution< double > n(0.0, 1.0);
   for(Eigen::Index i = 0; i < mean.size(); ++i) {
      const double x = noise_scale > 0.0 ? mean(i) + noise_scale * n(rng) : mean(i);
      a[static_cast< std::size_t >(i)] = std::clamp(x, 0.0, 1.0);
   }
   return a;
}

inline Vector to_vector(const std::vector< double >& v) {
   return Eigen::Map< const Vector >(v.data(), static_cast< Eigen::Index >(v.size()));
}

inline Vector concat(std::span< const Vector > parts) {
   Eigen::Index n = 0;
   for(const auto& p : parts) {
      n += p.size();
   }
   Vector out(n);
   Eigen::Index i = 0;
   for(const auto& p : parts) {
      out.segment(i, p.size()) = p;
      i += p.size();
   }
   return out;
}

}  // namespace detail

template < typename Rng >
std::vector< double > act_vehicle(const MlpParams& policy, const Vector& observation, double noise_scale, Rng& rng) {
   return detail::noisy(mlp_forward(policy, observation), noise_scale, rng);
}

template < typename Rng >
std::vector< double > act_edge(
   const MlpParams& policy, const Vector& observation, std::span< const Vector > vehicle_actions, double noise_scale,
   Rng& rng) {
   std::vector< Vector > parts{observation};
   parts.insert(parts.end(), vehicle_actions.begin(), vehicle_actions.end());
   return detail::noisy(mlp_forward(policy, detail::concat(parts)), noise_scale, rng);
}

struct RawJointAction {
   std::vector< std::vector< double > > vehicles;
   std::vector< double > edge;
};

using JointPolicy = std::function< RawJointAction(const World&, std::mt19937_64&) >;

/// Joint policy that runs the shared vehicle policy on every vehicle, then the edge policy.
inline JointPolicy snapshot_policy(std::shared_ptr< const PolicySnapshot > p, double noise_scale) {
   return [p = std::move(p), noise_scale](const World& w, std::mt19937_64& rng) {
      RawJointAction a;
      std::vector< Vector > va;
      for(std::size_t s = 0; s < w.vehicle_count(); ++s) {
         a.vehicles.push_back(act_vehicle(p->vehicle, detail::to_vector(observe_vehicle(w, s).features), noise_scale, rng));
         va.push_back(detail::to_vector(a.vehicles.back()));
      }
      a.edge = act_edge(p->edge, detail::to_vector(observe_edge(w).features), va, noise_scale, rng);
      return a;
   };
}

// ---------------------------------------------------------------------------
// Rollouts and evaluation (shared by every algorithm).

struct EpisodeResult {
   RewardVector total_reward;  // sum over slots of the system reward vector
   double scalarized = 0.0;    // total_reward . w
   MetricTotals totals;
   std::optional< double > qpuc;
   std::optional< double > ppuq;
};

inline EpisodeResult finish_episode(RewardVector total, const Weights& w, const MetricTotals& totals) {
   EpisodeResult r;
   r.total_reward = total;
   r.scalarized = total.scalarize(w);
   r.totals = totals;
   if(totals.sum_cdt > 0.0) {
      r.qpuc = qpuc(totals);
   }
   if(totals.sum_qdt > 0.0) {
      r.ppuq = ppuq(totals);
   }
   return r;
}

/// Plays one episode without learning. `metrics` and `trace` receive per-twin and
/// per-action rows when given.
inline EpisodeResult run_episode(
   const EnvironmentSetup& setup, const JointPolicy& policy, std::uint64_t episode_seed, Weights weights,
   int episode, std::mt19937_64& rng, std::ostream* metrics = nullptr, std::ostream* trace = nullptr) {
   World w = setup.make(episode_seed, weights, episode);
   RewardVector total;
   MetricTotals totals;
   while(!w.done()) {
      auto raw = policy(w, rng);
      const auto joint = decode_joint_action(w, std::move(raw.vehicles), std::move(raw.edge));
      const World before = w;
      const auto r = step(w, joint, {false, false});
      total.quality += r.outcome.reward.quality;
      total.profit += r.outcome.reward.profit;
      totals.add(r.outcome.records);
      if(metrics) {
         write_metric_csv_rows(*metrics, r.outcome.records);
      }
      if(trace) {
         write_trace_rows(*trace, before, joint, r.outcome);
      }
   }
   return finish_episode(total, weights, totals);
}

struct MeanStat {
   double mean = 0.0;
   double stderr_ = 0.0;
   std::size_t n = 0;
};

inline MeanStat mean_stat(std::span< const double > xs) {
   MeanStat s;
   s.n = xs.size();
   if(xs.empty()) {
      return s;
   }
   double sum = 0.0;
   for(double x : xs) {
      sum += x;
   }
   s.mean = sum / static_cast< double >(xs.size());
   if(xs.size() > 1) {
      double ss = 0.0;
      for(double x : xs) {
         ss += (x - s.mean) * (x - s.mean);
      }
      s.stderr_ = std::sqrt(ss / static_cast< double >(xs.size() - 1) / static_cast< double >(xs.size()));
   }
   return s;
}

struct EvaluationSummary {
   Weights weights;
   std::vector< EpisodeResult > episodes;
   MetricTotals totals;  // pooled over episodes
   MeanStat scalarized;
   MeanStat quality;  // per-episode system quality (mean QDT)
   MeanStat qpuc;
   MeanStat ppuq;
};

/// Evaluation seeds live on their own stream so they never coincide with training episodes.
inline std::uint64_t evaluation_seed(std::uint64_t seed, int k) {
   return derive_seed(seed, 7, static_cast< std::uint64_t >(k));
}

inline EvaluationSummary evaluate_policy(
   const EnvironmentSetup& setup, const JointPolicy& policy, Weights weights, int episodes, std::uint64_t seed,
   std::ostream* metrics = nullptr) {
   EvaluationSummary s;
   s.weights = weights;
   std::vector< double > sc;
   std::vector< double > q;
   std::vector< double > qp;
   std::vector< double > pq;
   auto rng = stream_rng(seed, 8);
   for(int k = 0; k < episodes; ++k) {
      auto r = run_episode(setup, policy, evaluation_seed(seed, k), weights, k, rng, metrics);
      s.totals.sum_qdt += r.totals.sum_qdt;
      s.totals.sum_cdt += r.totals.sum_cdt;
      s.totals.sum_pdt += r.totals.sum_pdt;
      s.totals.sum_timeliness += r.totals.sum_timeliness;
      s.totals.sum_redundancy += r.totals.sum_redundancy;
      s.totals.sum_sensing += r.totals.sum_sensing;
      s.totals.sum_transmission += r.totals.sum_transmission;
      s.totals.count += r.totals.count;
      sc.push_back(r.scalarized);
      q.push_back(r.totals.count ? r.totals.sum_qdt / static_cast< double >(r.totals.count) : 0.0);
      if(r.qpuc) {
         qp.push_back(*r.qpuc);
      }
      if(r.ppuq) {
         pq.push_back(*r.ppuq);
      }
      s.episodes.push_back(std::move(r));
   }
   s.scalarized = mean_stat(sc);
   s.quality = mean_stat(q);
   s.qpuc = mean_stat(qp);
   s.ppuq = mean_stat(pq);
   return s;
}

inline nlohmann::ordered_json to_json(const MeanStat& m) {
   return {{"mean", m.mean}, {"stderr", m.stderr_}, {"n", m.n}};
}

inline nlohmann::ordered_json to_json(const EvaluationSummary& s) {
   nlohmann::ordered_json j;
   j["weights"] = {s.weights.quality, s.weights.profit};
   j["episodes"] = s.episodes.size();
   j["scalarized_return"] = to_json(s.scalarized);
   j["episode_quality"] = to_json(s.quality);
   j["episode_qpuc"] = to_json(s.qpuc);
   j["episode_ppuq"] = to_json(s.ppuq);
   j["pooled"] = metric_summary_json(s.totals);
   return j;
}

// ---------------------------------------------------------------------------
// Targets and updates.

/// r . w + gamma * next_q, with the bootstrap dropped on terminal transitions.
inline double td_target(const RewardVector& r, const Weights& w, double gamma, double next_q, bool terminal) {
   return r.scalarize(w) + (terminal ? 0.0 : gamma * next_q);
}

/// Shared random actions for one learner step.
struct RandomDraws {
   Matrix vehicle;  // vehicle_action x N
   Matrix edge;     // edge_action x N

   template < typename Rng >
   static RandomDraws draw(const Dimensions& d, int n, Rng& rng) {
      return {random_actions(d.vehicle_action, static_cast< std::size_t >(n), rng),
              random_actions(d.edge_action, static_cast< std::size_t >(n), rng)};
   }
};

using Batch = std::vector< std::shared_ptr< const ReplayTransition > >;

namespace detail {

/// Column block for vehicle s at sample m: index m * S + s.
struct VehicleColumns {
   Matrix obs;
   Matrix action;
   Matrix others;
};

/// Others of column (m, s): actions of every other vehicle, in index order.
inline Matrix others_block(const Matrix& actions, std::size_t vehicles) {
   const Eigen::Index A = actions.rows();
   const auto S = static_cast< Eigen::Index >(vehicles);
   const Eigen::Index M = actions.cols() / S;
   Matrix out((S - 1) * A, actions.cols());
   for(Eigen::Index m = 0; m < M; ++m) {
      for(Eigen::Index s = 0; s < S; ++s) {
         Eigen::Index r = 0;
         for(Eigen::Index o = 0; o < S; ++o) {
            if(o == s) {
               continue;
            }
            out.block(r, m * S + s, A, 1) = actions.col(m * S + o);
            r += A;
         }
      }
   }
   return out;
}

/// All vehicle actions of sample m stacked in one column.
inline Matrix joint_block(const Matrix& actions, std::size_t vehicles) {
   const Eigen::Index A = actions.rows();
   const auto S = static_cast< Eigen::Index >(vehicles);
   const Eigen::Index M = actions.cols() / S;
   Matrix out(S * A, M);
   for(Eigen::Index m = 0; m < M; ++m) {
      for(Eigen::Index s = 0; s < S; ++s) {
         out.block(s * A, m, A, 1) = actions.col(m * S + s);
      }
   }
   return out;
}

inline Matrix gather(const Batch& b, const Dimensions& d, bool next) {
   const auto S = static_cast< Eigen::Index >(d.vehicles);
   Matrix out(static_cast< Eigen::Index >(d.vehicle_obs), static_cast< Eigen::Index >(b.size()) * S);
   for(std::size_t m = 0; m < b.size(); ++m) {
      const auto& src = next ? b[m]->next_vehicle_obs : b[m]->vehicle_obs;
      for(Eigen::Index s = 0; s < S; ++s) {
         out.col(static_cast< Eigen::Index >(m) * S + s) = src[static_cast< std::size_t >(s)];
      }
   }
   return out;
}

inline Matrix gather_actions(const Batch& b, const Dimensions& d) {
   const auto S = static_cast< Eigen::Index >(d.vehicles);
   Matrix out(static_cast< Eigen::Index >(d.vehicle_action), static_cast< Eigen::Index >(b.size()) * S);
   for(std::size_t m = 0; m < b.size(); ++m) {
      for(Eigen::Index s = 0; s < S; ++s) {
         out.col(static_cast< Eigen::Index >(m) * S + s) = b[m]->vehicle_actions[static_cast< std::size_t >(s)];
      }
   }
   return out;
}

inline Matrix gather_edge(const Batch& b, bool next) {
   Matrix out(b.front()->edge_obs.size(), static_cast< Eigen::Index >(b.size()));
   for(std::size_t m = 0; m < b.size(); ++m) {
      out.col(static_cast< Eigen::Index >(m)) = next ? b[m]->next_edge_obs : b[m]->edge_obs;
   }
   return out;
}

/// dQ/da of the advantage head at (obs, action, others); the baseline is a constant.
inline Matrix critic_action_gradient(const DuelingCritic& c, const Matrix& obs, const Matrix& action, const Matrix& others) {
   MlpCache cache;
   Matrix others_b = others.rows() > 0 ? others : Matrix(0, obs.cols());
   const Matrix in = stack_rows({&obs, &action, &others_b});
   const Matrix out = mlp_forward(c.advantage, in, &cache);
   Matrix din;
   mlp_backward(c.advantage, cache, Matrix::Ones(1, out.cols()), &din);
   return din.middleRows(static_cast< Eigen::Index >(c.observation_size), static_cast< Eigen::Index >(c.action_size));
}

inline double fit_critic(AgentNetworks& a, const Matrix& obs, const Matrix& act, const Matrix& others, const Matrix& random, const Matrix& y) {
   const auto eval = dueling_forward(a.critic, obs, act, others, random);
   const Matrix err = y - eval.q;
   const double B = static_cast< double >(y.cols());
   const double loss = err.squaredNorm() / B;
   const Matrix dq = -2.0 * err / B;
   auto g = dueling_backward(a.critic, eval, dq);
   optimizer_step(a.advantage_opt, a.critic.advantage, g.advantage);
   if(a.critic.dueling) {
      optimizer_step(a.value_opt, a.critic.value, g.value);
   }
   return loss;
}

}  // namespace detail

struct TargetValues {
   Matrix vehicle;  // 1 x (M*S), column m*S + s
   Matrix edge;     // 1 x M
};

/// Scalarized TD targets for the whole minibatch, next actions from the target policies.
inline TargetValues compute_targets(const Batch& b, const LearnerState& L, const TrainingConfig& cfg, const RandomDraws& rnd) {
   const auto& d = L.dims;
   const auto S = static_cast< Eigen::Index >(d.vehicles);
   const auto M = static_cast< Eigen::Index >(b.size());
   const Matrix next_obs = detail::gather(b, d, true);
   const Matrix next_act = mlp_forward(L.vehicle.target_policy, next_obs);
   const Matrix next_others = detail::others_block(next_act, d.vehicles);
   const Matrix qv = dueling_forward(L.vehicle.target_critic, next_obs, next_act, next_others, rnd.vehicle).q;

   const Matrix next_edge_obs = detail::gather_edge(b, true);
   const Matrix next_joint = detail::joint_block(next_act, d.vehicles);
   const Matrix edge_in = stack_rows({&next_edge_obs, &next_joint});
   const Matrix next_edge_act = mlp_forward(L.edge.target_policy, edge_in);
   const Matrix qe = dueling_forward(L.edge.target_critic, next_edge_obs, next_edge_act, next_joint, rnd.edge).q;

   TargetValues t{Matrix(1, M * S), Matrix(1, M)};
   for(Eigen::Index m = 0; m < M; ++m) {
      const auto& tr = *b[static_cast< std::size_t >(m)];
      for(Eigen::Index s = 0; s < S; ++s) {
         t.vehicle(0, m * S + s) =
            td_target(tr.vehicle_rewards[static_cast< std::size_t >(s)], tr.weights, cfg.gamma, qv(0, m * S + s), tr.terminal);
      }
      t.edge(0, m) = td_target(tr.edge_reward, tr.weights, cfg.gamma, qe(0, m), tr.terminal);
   }
   return t;
}

struct CriticLosses {
   double vehicle = 0.0;
   double edge = 0.0;
};

/// One optimizer step on both critics toward `targets`; returns the pre-step losses.
inline CriticLosses critic_update(const Batch& b, LearnerState& L, const TargetValues& targets, const RandomDraws& rnd) {
   const auto& d = L.dims;
   const Matrix obs = detail::gather(b, d, false);
   const Matrix act = detail::gather_actions(b, d);
   const Matrix others = detail::others_block(act, d.vehicles);
   CriticLosses l;
   l.vehicle = detail::fit_critic(L.vehicle, obs, act, others, rnd.vehicle, targets.vehicle);

   const Matrix eobs = detail::gather_edge(b, false);
   Matrix eact(static_cast< Eigen::Index >(d.edge_action), static_cast< Eigen::Index >(b.size()));
   for(std::size_t m = 0; m < b.size(); ++m) {
      eact.col(static_cast< Eigen::Index >(m)) = b[m]->edge_action;
   }
   const Matrix joint = detail::joint_block(act, d.vehicles);
   l.edge = detail::fit_critic(L.edge, eobs, eact, joint, rnd.edge, targets.edge);
   return l;
}

/// Deterministic policy-gradient ascent on both policies, critics held fixed.
inline void policy_update(const Batch& b, LearnerState& L) {
   const auto& d = L.dims;
   const Matrix obs = detail::gather(b, d, false);
   const Matrix stored = detail::gather_actions(b, d);
   const Matrix others = detail::others_block(stored, d.vehicles);
   MlpCache cache;
   const Matrix a = mlp_forward(L.vehicle.policy, obs, &cache);
   const Matrix dqda = detail::critic_action_gradient(L.vehicle.critic, obs, a, others);
   const double B = static_cast< double >(obs.cols());
   const auto gv = mlp_backward(L.vehicle.policy, cache, -dqda / B);

   const Matrix eobs = detail::gather_edge(b, false);
   const Matrix joint = detail::joint_block(stored, d.vehicles);
   const Matrix ein = stack_rows({&eobs, &joint});
   MlpCache ecache;
   const Matrix ea = mlp_forward(L.edge.policy, ein, &ecache);
   const Matrix edqda = detail::critic_action_gradient(L.edge.critic, eobs, ea, joint);
   const auto ge = mlp_backward(L.edge.policy, ecache, -edqda / static_cast< double >(eobs.cols()));

   optimizer_step(L.vehicle.policy_opt, L.vehicle.policy, gv);
   optimizer_step(L.edge.policy_opt, L.edge.policy, ge);
}

/// Sample, fit critics, then policies; soft-update targets on schedule.
template < typename Rng >
CriticLosses learner_step(LearnerState& L, const ReplayBuffer& buffer, const TrainingConfig& cfg, Rng& rng) {
   const auto batch = buffer.sample(cfg.batch_size, rng);
   const auto rnd = RandomDraws::draw(L.dims, cfg.random_actions, rng);
   const auto targets = compute_targets(batch, L, cfg, rnd);
   const auto losses = critic_update(batch, L, targets, rnd);
   policy_update(batch, L);
   ++L.steps;
   if(L.steps % static_cast< std::uint64_t >(cfg.target_period) == 0) {
      L.vehicle.soft_update_targets(cfg.soft_update_vehicle);
      L.edge.soft_update_targets(cfg.soft_update_edge);
   }
   return losses;
}

// ---------------------------------------------------------------------------
// Training.

struct IterationLog {
   int iteration = 0;
   Weights weights;
   double exploration = 0.0;
   RewardVector total_reward;
   double scalarized = 0.0;
   std::optional< double > qpuc;
   std::optional< double > ppuq;
   std::size_t twin_slots = 0;
   double critic_loss_vehicle = 0.0;  // mean over this iteration's learner steps
   double critic_loss_edge = 0.0;
   std::uint64_t learner_steps = 0;
   std::size_t buffer_size = 0;
};

inline nlohmann::ordered_json to_json(const IterationLog& l) {
   auto opt = [](const std::optional< double >& v) {
      return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json();
   };
   return {{"iteration", l.iteration},
           {"weights", {l.weights.quality, l.weights.profit}},
           {"exploration", l.exploration},
           {"reward_quality", l.total_reward.quality},
           {"reward_profit", l.total_reward.profit},
           {"scalarized_return", l.scalarized},
           {"qpuc", opt(l.qpuc)},
           {"ppuq", opt(l.ppuq)},
           {"twin_slots", l.twin_slots},
           {"critic_loss_vehicle", l.critic_loss_vehicle},
           {"critic_loss_edge", l.critic_loss_edge},
           {"learner_steps", l.learner_steps},
           {"buffer_size", l.buffer_size}};
}

struct TrainResult {
   LearnerState learner;
   std::vector< IterationLog > history;
};

namespace detail {

struct EpisodeOutcome {
   EpisodeResult result;
   std::vector< ReplayTransition > transitions;
};

inline Vector observation_vector(const World& w, std::size_t s) {
   return to_vector(observe_vehicle(w, s).features);
}

/// One training step of the environment: act with exploration, evaluate, build the transition.
inline ReplayTransition experience_step(
   World& w, const PolicySnapshot& p, double noise, std::mt19937_64& rng, StepResult& out) {
   ReplayTransition t;
   t.weights = w.weights;
   std::vector< std::vector< double > > raw;
   for(std::size_t s = 0; s < w.vehicle_count(); ++s) {
      t.vehicle_obs.push_back(observation_vector(w, s));
      raw.push_back(act_vehicle(p.vehicle, t.vehicle_obs.back(), noise, rng));
      t.vehicle_actions.push_back(to_vector(raw.back()));
   }
   t.edge_obs = to_vector(observe_edge(w).features);
   auto edge = act_edge(p.edge, t.edge_obs, t.vehicle_actions, noise, rng);
   t.edge_action = to_vector(edge);
   const auto joint = decode_joint_action(w, std::move(raw), std::move(edge));
   out = step(w, joint);
   t.vehicle_rewards = out.vehicle_rewards;
   t.edge_reward = out.edge_reward;
   t.terminal = w.done();
   // The successor slot of the last transition is never bootstrapped; its observation
   // is still encoded (slot index T) so every transition has the same shape.
   for(std::size_t s = 0; s < w.vehicle_count(); ++s) {
      t.next_vehicle_obs.push_back(observation_vector(w, s));
   }
   t.next_edge_obs = to_vector(observe_edge(w).features);
   t.next_weights = w.weights;
   return t;
}

}  // namespace detail

/// Training episodes use the scenario as given; fading and exploration vary per iteration.
inline std::uint64_t training_episode_seed(std::uint64_t seed, int iteration) {
   return derive_seed(seed, 5, static_cast< std::uint64_t >(iteration));
}

struct TrainCallbacks {
   std::function< void(const IterationLog&) > on_iteration;
};

namespace detail {

inline IterationLog make_log(
   int it, const Weights& w, double eps, const EpisodeResult& r, double lv, double le, std::size_t nsteps,
   std::uint64_t steps, std::size_t buffer) {
   IterationLog log;
   log.iteration = it;
   log.weights = w;
   log.exploration = eps;
   log.total_reward = r.total_reward;
   log.scalarized = r.scalarized;
   log.qpuc = r.qpuc;
   log.ppuq = r.ppuq;
   log.twin_slots = r.totals.count;
   log.critic_loss_vehicle = nsteps ? lv / static_cast< double >(nsteps) : 0.0;
   log.critic_loss_edge = nsteps ? le / static_cast< double >(nsteps) : 0.0;
   log.learner_steps = steps;
   log.buffer_size = buffer;
   return log;
}

/// Actor and learner interleaved on one thread; bit-reproducible for a given seed.
inline TrainResult train_single_thread(
   const TrainingConfig& cfg, const EnvironmentSetup& setup, const TrainCallbacks& cb) {
   const auto dims = Dimensions::from(*setup.scenario);
   auto init_rng = stream_rng(cfg.seed, 1);
   auto actor_rng = stream_rng(cfg.seed, 2);
   auto learner_rng = stream_rng(cfg.seed, 3);
   auto weight_rng = stream_rng(cfg.seed, 4);
   TrainResult res{LearnerState::create(dims, cfg, init_rng), {}};
   auto& L = res.learner;
   ReplayBuffer buffer(cfg.buffer_capacity);
   PolicySnapshot actor = L.snapshot(cfg.sync_from_targets);
   std::uint64_t env_steps = 0;
   for(int it = 0; it < cfg.iterations; ++it) {
      const Weights w = cfg.resample_weights ? sample_weight_vector(weight_rng) : cfg.fixed_weights;
      World world = setup.make(training_episode_seed(cfg.seed, it), w, it);
      const double eps = cfg.exploration(it);
      RewardVector total;
      MetricTotals totals;
      double lv = 0.0;
      double le = 0.0;
      std::size_t nsteps = 0;
      while(!world.done()) {
         StepResult sr;
         buffer.push(experience_step(world, actor, eps, actor_rng, sr));
         total.quality += sr.outcome.reward.quality;
         total.profit += sr.outcome.reward.profit;
         totals.add(sr.outcome.records);
         ++env_steps;
         if(buffer.size() >= cfg.effective_warmup() && env_steps % static_cast< std::uint64_t >(cfg.update_every) == 0) {
            const auto l = learner_step(L, buffer, cfg, learner_rng);
            lv += l.vehicle;
            le += l.edge;
            ++nsteps;
            if(L.steps % static_cast< std::uint64_t >(cfg.actor_sync_period) == 0) {
               actor = L.snapshot(cfg.sync_from_targets);
            }
         }
      }
      res.history.push_back(
         make_log(it, world.weights, eps, finish_episode(total, w, totals), lv, le, nsteps, L.steps, buffer.size()));
      if(cb.on_iteration) {
         cb.on_iteration(res.history.back());
      }
   }
   return res;
}

/// K actor threads and one learner thread sharing the replay buffer.
inline TrainResult train_threaded(const TrainingConfig& cfg, const EnvironmentSetup& setup, const TrainCallbacks& cb) {
   const auto dims = Dimensions::from(*setup.scenario);
   auto init_rng = stream_rng(cfg.seed, 1);
   TrainResult res{LearnerState::create(dims, cfg, init_rng), {}};
   auto& L = res.learner;
   ReplayBuffer buffer(cfg.buffer_capacity);

   std::mutex policy_mutex;
   auto current = std::make_shared< const PolicySnapshot >(L.snapshot(cfg.sync_from_targets));
   std::mutex log_mutex;
   std::atomic< int > next_iteration{0};
   std::atomic< int > actors_running{cfg.actors};
   std::atomic< std::uint64_t > env_steps{0};
   std::atomic< std::uint64_t > learner_steps{0};
   std::mutex loss_mutex;
   double lv = 0.0;
   double le = 0.0;
   std::size_t nsteps = 0;
   std::exception_ptr failure;
   std::mutex failure_mutex;

   auto record_failure = [&] {
      std::lock_guard lock(failure_mutex);
      if(!failure) {
         failure = std::current_exception();
      }
   };

   auto actor_fn = [&](int k) {
      try {
         auto rng = stream_rng(cfg.seed, 100 + static_cast< std::uint64_t >(k));
         for(int it = next_iteration++; it < cfg.iterations; it = next_iteration++) {
            std::shared_ptr< const PolicySnapshot > p;
            {
               std::lock_guard lock(policy_mutex);
               p = current;
            }
            auto wrng = stream_rng(derive_seed(cfg.seed, 4, static_cast< std::uint64_t >(it)), 0);
            const Weights w = cfg.resample_weights ? sample_weight_vector(wrng) : cfg.fixed_weights;
            World world = setup.make(training_episode_seed(cfg.seed, it), w, it);
            const double eps = cfg.exploration(it);
            RewardVector total;
            MetricTotals totals;
            while(!world.done()) {
               StepResult sr;
               buffer.push(detail::experience_step(world, *p, eps, rng, sr));
               ++env_steps;
               total.quality += sr.outcome.reward.quality;
               total.profit += sr.outcome.reward.profit;
               totals.add(sr.outcome.records);
            }
            double v = 0.0;
            double e = 0.0;
            std::size_t n = 0;
            {
               std::lock_guard lock(loss_mutex);
               std::swap(v, lv);
               std::swap(e, le);
               std::swap(n, nsteps);
            }
            auto log = make_log(it, world.weights, eps, finish_episode(total, w, totals), v, e, n, learner_steps.load(), buffer.size());
            std::lock_guard lock(log_mutex);
            res.history.push_back(log);
            if(cb.on_iteration) {
               cb.on_iteration(log);
            }
         }
      } catch(...) {
         record_failure();
      }
      --actors_running;
   };

   auto learner_fn = [&] {
      try {
         auto rng = stream_rng(cfg.seed, 3);
         while(actors_running.load() > 0) {
            const auto allowed = env_steps.load() / static_cast< std::uint64_t >(cfg.update_every);
            if(buffer.size() < cfg.effective_warmup() || L.steps >= allowed) {
               std::this_thread::yield();
               continue;
            }
            const auto l = learner_step(L, buffer, cfg, rng);
            learner_steps = L.steps;
            {
               std::lock_guard lock(loss_mutex);
               lv += l.vehicle;
               le += l.edge;
               ++nsteps;
            }
            if(L.steps % static_cast< std::uint64_t >(cfg.actor_sync_period) == 0) {
               auto snap = std::make_shared< const PolicySnapshot >(L.snapshot(cfg.sync_from_targets));
               std::lock_guard lock(policy_mutex);
               current = std::move(snap);
            }
         }
      } catch(...) {
         record_failure();
      }
   };

   std::thread learner(learner_fn);
   std::vector< std::thread > actors;
   for(int k = 0; k < cfg.actors; ++k) {
      actors.emplace_back(actor_fn, k);
   }
   for(auto& t : actors) {
      t.join();
   }
   learner.join();
   if(failure) {
      std::rethrow_exception(failure);
   }
   std::sort(res.history.begin(), res.history.end(), [](const auto& a, const auto& b) { return a.iteration < b.iteration; });
   return res;
}

}  // namespace detail

/// Trains the learner; `single_thread` selects the reproducible interleaved mode.
inline TrainResult train(const TrainingConfig& cfg, const EnvironmentSetup& setup, const TrainCallbacks& cb = {}) {
   cfg.validate();
   if(!setup.scenario) {
      throw ConfigError("mamo: no scenario");
   }
   setup.scenario->validate();
   if(cfg.single_thread) {
      return detail::train_single_thread(cfg, setup, cb);
   }
   return detail::train_threaded(cfg, setup, cb);
}

/// Local policies stored in a checkpoint written from `LearnerState::networks()`.
inline PolicySnapshot policies_from_checkpoint(const Checkpoint& ck, const Dimensions& d) {
   auto get = [&](const char* name) -> const MlpParams& {
      auto it = ck.networks.find(name);
      if(it == ck.networks.end()) {
         throw ConfigError(std::string("checkpoint lacks network ") + name);
      }
      return it->second;
   };
   PolicySnapshot p{get("vehicle.policy"), get("edge.policy")};
   if(p.vehicle.input_size() != d.vehicle_obs || p.vehicle.output_size() != d.vehicle_action
      || p.edge.input_size() != d.edge_policy_input() || p.edge.output_size() != d.edge_action) {
      throw DimensionError("checkpoint policies do not fit this scenario");
   }
   return p;
}

/// Greedy (noise-free) joint policy from the learner's local policies.
inline JointPolicy greedy_policy(const LearnerState& L) {
   return snapshot_policy(std::make_shared< const PolicySnapshot >(L.snapshot(false)), 0.0);
}

}  // namespace dtvec
