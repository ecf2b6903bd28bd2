#pragma once

// Discrete-time multi-agent environment around one edge node: observations, action
// decoding (with constraint repair), slot evaluation and the per-agent rewards.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dtvec/error.hpp"
#include "dtvec/scenario.hpp"
#include "dtvec/sensing_queue.hpp"
#include "dtvec/twin_metrics.hpp"
#include "dtvec/v2i_channel.hpp"

namespace dtvec {

/// Objective weights (quality, profit); they sum to one.
struct Weights {
   double quality = 0.5;
   double profit = 0.5;
   bool operator==(const Weights&) const = default;
};

inline Weights sample_weight_vector(std::mt19937_64& rng) {
   const double w = std::uniform_real_distribution< double >(0.0, 1.0)(rng);
   return {w, 1.0 - w};
}

struct RewardVector {
   double quality = 0.0;
   double profit = 0.0;

   double scalarize(const Weights& w) const { return quality * w.quality + profit * w.profit; }
   RewardVector operator-(const RewardVector& o) const {
      return {quality - o.quality, profit - o.profit};
   }
   bool operator==(const RewardVector&) const = default;
};

struct EnvironmentConfig {
   double upload_cv = 0.3;             // coefficient of variation of the upload time
   double steady_state_margin = 0.95;  // workload ceiling enforced by the decoder
   int edge_random_candidates = 8;     // random allocations in the edge reward's candidate set
   int transmission_horizon = 10;      // slots an upload may span before it is dropped
   double min_distance = 1.0;          // meters; keeps the path-loss term finite
   double normalization_epsilon = 1e-3;

   void validate() const {
      if(!(upload_cv >= 0.0)) {
         throw ConfigError("environment: upload_cv must be >= 0");
      }
      if(!(steady_state_margin > 0.0 && steady_state_margin < 1.0)) {
         throw ConfigError("environment: steady_state_margin must lie in (0,1)");
      }
      if(!(normalization_epsilon > 0.0 && normalization_epsilon < 0.5)) {
         throw ConfigError("environment: normalization_epsilon must lie in (0, 0.5)");
      }
      if(edge_random_candidates < 0 || transmission_horizon < 1) {
         throw ConfigError("environment: invalid candidate count or horizon");
      }
   }
};

struct CachedInfo {
   double updating = 0.0;  // u of the newest delivered copy
};

/// Mutable episode state plus the shared, immutable scenario.
struct World {
   std::shared_ptr< const Scenario > scenario;
   ChannelParams channel;
   MetricWeights metric_weights;
   EnvironmentConfig config;

   int episode = 0;
   std::uint64_t episode_seed = 0;
   int slot = 0;
   Weights weights;
   NormalizationState norm;
   std::vector< std::optional< CachedInfo > > cache;  // per info index
   std::vector< std::vector< double > > fading;       // [vehicle][slot], |h|^2 draws

   const Scenario& sc() const { return *scenario; }
   std::size_t vehicle_count() const { return scenario->vehicles.size(); }
   std::size_t info_count() const { return scenario->infos.size(); }
   bool done() const { return slot >= scenario->slot_count; }
   double now() const { return scenario->slot_time(slot); }

   double distance_of(std::size_t vehicle, int at_slot) const {
      return scenario->vehicle_distance(vehicle, scenario->slot_time(at_slot));
   }
   bool in_range(std::size_t vehicle, int at_slot) const {
      return distance_of(vehicle, at_slot) <= scenario->edge.range;
   }
   double fading_gain(std::size_t vehicle, int at_slot) const {
      const auto& row = fading.at(vehicle);
      if(at_slot < 0 || static_cast< std::size_t >(at_slot) >= row.size()) {
         return channel.fading_mean;
      }
      return row[static_cast< std::size_t >(at_slot)];
   }
};

/// Fresh episode: slot 0, empty cache, new bounds, fading drawn per (vehicle, slot).
inline World make_world(
   std::shared_ptr< const Scenario > scenario,
   const ChannelParams& channel,
   const MetricWeights& metric_weights,
   const EnvironmentConfig& config,
   std::uint64_t episode_seed,
   Weights weights,
   int episode = 0) {
   scenario->validate();
   channel.validate();
   metric_weights.validate();
   config.validate();
   World w;
   w.scenario = std::move(scenario);
   w.channel = channel;
   w.metric_weights = metric_weights;
   w.config = config;
   w.episode = episode;
   w.episode_seed = episode_seed;
   w.weights = weights;
   w.norm.epsilon = config.normalization_epsilon;
   w.cache.assign(w.info_count(), std::nullopt);
   auto rng = stream_rng(episode_seed, 11);
   std::normal_distribution< double > gain(channel.fading_mean, std::sqrt(channel.fading_var));
   const auto horizon =
      static_cast< std::size_t >(w.scenario->slot_count + config.transmission_horizon + 1);
   w.fading.assign(w.vehicle_count(), std::vector< double >(horizon, 0.0));
   for(auto& row : w.fading) {
      for(auto& g : row) {
         g = std::max(0.0, gain(rng));
      }
   }
   return w;
}

/// Everything needed to start episodes on one scenario.
struct EnvironmentSetup {
   std::shared_ptr< const Scenario > scenario;
   ChannelParams channel;
   MetricWeights metric_weights;
   EnvironmentConfig config;

   World make(std::uint64_t episode_seed, Weights weights, int episode = 0) const {
      if(!scenario) {
         throw ConfigError("environment: no scenario");
      }
      return make_world(scenario, channel, metric_weights, config, episode_seed, weights, episode);
   }
};

/// Independent 64-bit seed for item `index` of stream `stream`.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
   std::seed_seq seq{
      static_cast< std::uint32_t >(seed), static_cast< std::uint32_t >(seed >> 32),
      static_cast< std::uint32_t >(stream), static_cast< std::uint32_t >(index),
      static_cast< std::uint32_t >(index >> 32)};
   std::uint32_t out[2];
   seq.generate(out, out + 2);
   return (static_cast< std::uint64_t >(out[0]) << 32) | out[1];
}

// ---------------------------------------------------------------------------
// Observations.

struct VehicleObservation {
   int slot = 0;
   int vehicle = 0;  // index
   Point location;
   bool in_range = false;
   Weights weights;
   std::vector< double > features;
   std::vector< std::uint8_t > mask;  // 0 marks padding
};

struct EdgeObservation {
   int slot = 0;
   int edge = 0;
   std::vector< double > distances;  // per vehicle, meters; 0 when out of range
   std::vector< std::uint8_t > in_range;
   Weights weights;
   std::vector< double > features;
   std::vector< std::uint8_t > mask;
};

inline std::size_t vehicle_observation_size(const Scenario& sc) {
   return 6 + 7 * sc.infos.size() + 2;
}
inline std::size_t edge_observation_size(const Scenario& sc) {
   return 2 + 2 * sc.vehicles.size() + sc.vehicles.size() * sc.infos.size() + 3 * sc.infos.size() + 2;
}
inline std::size_t vehicle_action_size(const Scenario& sc) {
   return 3 * sc.infos.size() + 1;
}
inline std::size_t edge_action_size(const Scenario& sc) {
   return sc.vehicles.size();
}

namespace detail {

struct ObservationScales {
   double freq = 1.0;
   double cost = 1.0;
   double age = 10.0;
};

inline ObservationScales observation_scales(const Scenario& sc) {
   ObservationScales s;
   double fmax = 0.0;
   double cmax = 0.0;
   for(const auto& v : sc.vehicles) {
      for(const auto& c : v.capabilities) {
         fmax = std::max(fmax, c.freq_max);
         cmax = std::max(cmax, c.sensing_cost);
      }
   }
   s.freq = fmax > 0.0 ? fmax : 1.0;
   s.cost = cmax > 0.0 ? cmax : 1.0;
   s.age = 10.0 * sc.slot_duration;
   return s;
}

/// Cache ages and the share of twins requiring each info; common to both observers.
inline void append_edge_state(
   const World& w, std::vector< double >& f, std::vector< std::uint8_t >& m, double age_scale) {
   const auto& sc = w.sc();
   for(std::size_t d = 0; d < sc.infos.size(); ++d) {
      const bool cached = w.cache[d].has_value();
      f.push_back(cached ? 1.0 : 0.0);
      m.push_back(1);
      f.push_back(cached ? std::min((w.now() - w.cache[d]->updating) / age_scale, 5.0) : 0.0);
      m.push_back(cached ? 1 : 0);
   }
   for(const auto& info : sc.infos) {
      double n = 0.0;
      for(const auto& e : sc.entities) {
         n += e.requires_info(info.id) ? 1.0 : 0.0;
      }
      f.push_back(sc.entities.empty() ? 0.0 : n / static_cast< double >(sc.entities.size()));
      m.push_back(1);
   }
   f.push_back(w.weights.quality);
   m.push_back(1);
   f.push_back(w.weights.profit);
   m.push_back(1);
}

}  // namespace detail

inline VehicleObservation observe_vehicle(const World& w, std::size_t s) {
   const auto& sc = w.sc();
   const auto scales = detail::observation_scales(sc);
   VehicleObservation o;
   o.slot = w.slot;
   o.vehicle = static_cast< int >(s);
   o.location = sc.vehicle_position(s, w.now());
   const double dis = distance(o.location, sc.edge.location);
   o.in_range = dis <= sc.edge.range;
   o.weights = w.weights;
   auto& f = o.features;
   auto& m = o.mask;
   f.reserve(vehicle_observation_size(sc));
   const double denom_s = sc.vehicles.size() > 1 ? static_cast< double >(sc.vehicles.size() - 1) : 1.0;
   f.insert(f.end(),
            {static_cast< double >(w.slot) / sc.slot_count,
             static_cast< double >(s) / denom_s,
             (o.location.x - sc.edge.location.x) / sc.edge.range,
             (o.location.y - sc.edge.location.y) / sc.edge.range,
             dis / sc.edge.range,
             o.in_range ? 1.0 : 0.0});
   m.insert(m.end(), 6, 1);
   const auto& v = sc.vehicles[s];
   for(const auto& info : sc.infos) {
      const auto* cap = v.capability(info.id);
      f.push_back(cap ? 1.0 : 0.0);
      m.push_back(1);
      f.push_back(cap ? cap->freq_min / scales.freq : 0.0);
      f.push_back(cap ? cap->freq_max / scales.freq : 0.0);
      f.push_back(cap ? cap->sensing_cost / scales.cost : 0.0);
      m.insert(m.end(), 3, cap ? 1 : 0);
   }
   detail::append_edge_state(w, f, m, scales.age);
   return o;
}

inline EdgeObservation observe_edge(const World& w) {
   const auto& sc = w.sc();
   const auto scales = detail::observation_scales(sc);
   EdgeObservation o;
   o.slot = w.slot;
   o.weights = w.weights;
   auto& f = o.features;
   auto& m = o.mask;
   f.reserve(edge_observation_size(sc));
   f.push_back(static_cast< double >(w.slot) / sc.slot_count);
   f.push_back(0.0);
   m.insert(m.end(), 2, 1);
   for(std::size_t s = 0; s < sc.vehicles.size(); ++s) {
      const double dis = w.distance_of(s, w.slot);
      const bool in = dis <= sc.edge.range;
      o.distances.push_back(in ? dis : 0.0);
      o.in_range.push_back(in ? 1 : 0);
      f.push_back(in ? dis / sc.edge.range : 0.0);
      m.push_back(in ? 1 : 0);
      f.push_back(in ? 1.0 : 0.0);
      m.push_back(1);
   }
   for(const auto& v : sc.vehicles) {
      for(const auto& info : sc.infos) {
         f.push_back(v.capability(info.id) ? 1.0 : 0.0);
         m.push_back(1);
      }
   }
   detail::append_edge_state(w, f, m, scales.age);
   return o;
}

// ---------------------------------------------------------------------------
// Actions.

enum class SkipReason {
   none,
   out_of_range,
   no_bandwidth,
   below_reliability_power,  // C2 cannot be met at the chosen power
   nothing_sensed,
};

inline const char* to_string(SkipReason r) {
   switch(r) {
      case SkipReason::none: return "none";
      case SkipReason::out_of_range: return "out_of_range";
      case SkipReason::no_bandwidth: return "no_bandwidth";
      case SkipReason::below_reliability_power: return "below_reliability_power";
      case SkipReason::nothing_sensed: return "nothing_sensed";
   }
   return "unknown";
}

/// Decoded per-slot decision of one vehicle. Sensed items are exactly `queue`;
/// an empty queue is the null action.
struct VehicleAction {
   int vehicle = 0;  // index
   bool in_range = false;
   SkipReason skip = SkipReason::none;
   double distance = 0.0;
   double bandwidth = 0.0;
   double power = 0.0;
   std::vector< QueueEntry > queue;  // ordered by info id
   std::vector< int > gated;         // infos the raw gates asked for, before repair

   bool uploads() const { return !queue.empty(); }
   bool senses(int info_id) const {
      return std::any_of(queue.begin(), queue.end(), [&](const auto& e) { return e.info_id == info_id; });
   }
};

struct EdgeAction {
   std::vector< double > bandwidth;  // per vehicle index; zero outside coverage
};

struct JointAction {
   std::vector< VehicleAction > vehicles;
   EdgeAction edge;
   std::vector< std::vector< double > > raw_vehicles;
   std::vector< double > raw_edge;
};

/// Splits the edge bandwidth over in-range vehicles in proportion to `raw`
/// (negative entries count as zero); uniform when every share is zero.
inline EdgeAction decode_edge_action(
   std::span< const double > raw, std::span< const std::uint8_t > in_range, double edge_bandwidth) {
   EdgeAction a;
   a.bandwidth.assign(in_range.size(), 0.0);
   double total = 0.0;
   std::size_t covered = 0;
   for(std::size_t s = 0; s < in_range.size(); ++s) {
      if(in_range[s]) {
         total += std::max(0.0, s < raw.size() ? raw[s] : 0.0);
         ++covered;
      }
   }
   if(covered == 0) {
      return a;
   }
   for(std::size_t s = 0; s < in_range.size(); ++s) {
      if(!in_range[s]) {
         continue;
      }
      a.bandwidth[s] = total > 0.0 ? std::max(0.0, raw[s]) / total * edge_bandwidth
                                   : edge_bandwidth / static_cast< double >(covered);
   }
   return a;
}

struct VehicleDecodeContext {
   const Scenario* scenario = nullptr;
   const ChannelParams* channel = nullptr;
   const EnvironmentConfig* config = nullptr;
   std::size_t vehicle = 0;
   double distance = 0.0;
   double bandwidth = 0.0;
};

inline VehicleDecodeContext decode_context(const World& w, std::size_t s, double bandwidth) {
   return {&w.sc(), &w.channel, &w.config, s, w.distance_of(s, w.slot), bandwidth};
}

/// Maps raw policy output in [0,1] to a feasible action. Layout per info (all infos,
/// in scenario order): gate, frequency knob, priority score; then one power knob.
inline VehicleAction decode_vehicle_action(std::span< const double > raw, const VehicleDecodeContext& ctx) {
   const auto& sc = *ctx.scenario;
   const auto& ch = *ctx.channel;
   const auto& cfg = *ctx.config;
   const auto& vehicle = sc.vehicles.at(ctx.vehicle);
   const std::size_t n_infos = sc.infos.size();
   if(raw.size() != vehicle_action_size(sc)) {
      throw DimensionError(
         "vehicle action has " + std::to_string(raw.size()) + " entries, expected "
         + std::to_string(vehicle_action_size(sc)));
   }
   auto knob = [&](std::size_t i) { return std::clamp(raw[i], 0.0, 1.0); };

   VehicleAction a;
   a.vehicle = static_cast< int >(ctx.vehicle);
   a.distance = ctx.distance;
   a.in_range = ctx.distance <= sc.edge.range;
   a.bandwidth = a.in_range ? ctx.bandwidth : 0.0;
   a.power = knob(3 * n_infos) * vehicle.power_cap;

   struct Candidate {
      QueueEntry entry;
      double score;
   };
   std::vector< Candidate > picked;
   for(std::size_t d = 0; d < n_infos; ++d) {
      const auto& info = sc.infos[d];
      const auto* cap = vehicle.capability(info.id);
      if(!cap || raw[3 * d] < 0.5) {
         continue;
      }
      a.gated.push_back(info.id);
      QueueEntry e;
      e.info_id = info.id;
      e.frequency = cap->freq_min + knob(3 * d + 1) * (cap->freq_max - cap->freq_min);
      picked.push_back({e, knob(3 * d + 2)});
   }

   if(!a.in_range) {
      a.skip = SkipReason::out_of_range;
      return a;
   }
   if(picked.empty()) {
      a.skip = SkipReason::nothing_sensed;
      return a;
   }
   const double dis = std::max(ctx.distance, cfg.min_distance);
   double needed = 0.0;
   try {
      needed = min_power_for_reliability(dis, ch);
   } catch(const InfeasibleError&) {
      needed = std::numeric_limits< double >::infinity();
   }
   if(!(a.power > 0.0) || a.power < needed) {
      a.skip = SkipReason::below_reliability_power;
      return a;
   }
   const double mean_rate = shannon_rate(a.bandwidth, snr(dis, a.power, ch.fading_mean, ch));
   if(!(mean_rate > 0.0)) {
      a.skip = SkipReason::no_bandwidth;
      return a;
   }

   // Distinct priorities: higher score first, lower id breaks ties.
   std::vector< std::size_t > order(picked.size());
   std::iota(order.begin(), order.end(), 0);
   std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
      if(picked[i].score != picked[j].score) {
         return picked[i].score > picked[j].score;
      }
      return picked[i].entry.info_id < picked[j].entry.info_id;
   });
   for(std::size_t r = 0; r < order.size(); ++r) {
      picked[order[r]].entry.priority = static_cast< int >(order.size() - r);
   }
   for(auto& c : picked) {
      const double alpha = sc.infos[sc.info_index(c.entry.info_id)].size / mean_rate;
      const double sd = cfg.upload_cv * alpha;
      c.entry.upload_time = {alpha, sd * sd};
      a.queue.push_back(c.entry);
   }

   // Steady state: scale frequencies down to the margin; items that would fall below
   // their minimum frequency are dropped, lowest priority first.
   const double margin = cfg.steady_state_margin;
   while(!a.queue.empty()) {
      const double rho = total_workload(a.queue);
      if(rho < margin) {
         break;
      }
      // Slightly under the margin so rounding cannot leave rho exactly on it.
      const double factor = margin * (1.0 - 1e-9) / rho;
      for(auto& e : a.queue) {
         const auto* cap = vehicle.capability(e.info_id);
         e.frequency = std::max(cap->freq_min, e.frequency * factor);
      }
      if(total_workload(a.queue) < margin) {
         break;
      }
      auto lowest = std::min_element(a.queue.begin(), a.queue.end(), [](const auto& x, const auto& y) {
         return x.priority < y.priority;
      });
      a.queue.erase(lowest);
   }
   if(a.queue.empty()) {
      a.skip = SkipReason::nothing_sensed;
   }
   return a;
}

inline std::vector< std::uint8_t > coverage_mask(const World& w) {
   std::vector< std::uint8_t > in(w.vehicle_count());
   for(std::size_t s = 0; s < in.size(); ++s) {
      in[s] = w.in_range(s, w.slot) ? 1 : 0;
   }
   return in;
}

inline JointAction decode_joint_action(
   const World& w, std::vector< std::vector< double > > raw_vehicles, std::vector< double > raw_edge) {
   if(raw_vehicles.size() != w.vehicle_count()) {
      throw DimensionError("joint action: one raw vehicle action per vehicle required");
   }
   if(raw_edge.size() != edge_action_size(w.sc())) {
      throw DimensionError("joint action: edge action must have one entry per vehicle");
   }
   JointAction j;
   const auto in = coverage_mask(w);
   j.edge = decode_edge_action(raw_edge, in, w.sc().edge.bandwidth);
   for(std::size_t s = 0; s < w.vehicle_count(); ++s) {
      j.vehicles.push_back(decode_vehicle_action(raw_vehicles[s], decode_context(w, s, j.edge.bandwidth[s])));
   }
   j.raw_vehicles = std::move(raw_vehicles);
   j.raw_edge = std::move(raw_edge);
   return j;
}

/// Copy of `j` in which vehicle `s` senses and uploads nothing; everything else,
/// including the bandwidth split, is unchanged.
inline JointAction with_null_vehicle(const JointAction& j, std::size_t s) {
   JointAction out = j;
   auto& v = out.vehicles.at(s);
   v.queue.clear();
   v.gated.clear();
   if(v.skip == SkipReason::none) {
      v.skip = SkipReason::nothing_sensed;
   }
   return out;
}

/// Every violated constraint, as a readable line; empty when the action is feasible.
inline std::vector< std::string > validate_joint_action(const World& w, const JointAction& j) {
   std::vector< std::string > out;
   const auto& sc = w.sc();
   const double be = sc.edge.bandwidth;
   double total_bw = 0.0;
   for(std::size_t s = 0; s < j.edge.bandwidth.size(); ++s) {
      const double b = j.edge.bandwidth[s];
      if(!(b >= 0.0 && b <= be * (1.0 + 1e-12))) {
         out.push_back("vehicle " + std::to_string(s) + ": bandwidth outside [0, b_e]");
      }
      if(b > 0.0 && !w.in_range(s, w.slot)) {
         out.push_back("vehicle " + std::to_string(s) + ": bandwidth given outside coverage");
      }
      total_bw += b;
   }
   if(total_bw > be * (1.0 + 1e-12)) {
      out.push_back("edge: total bandwidth exceeds capacity");
   }
   for(const auto& v : j.vehicles) {
      const auto& spec = sc.vehicles.at(static_cast< std::size_t >(v.vehicle));
      const std::string who = "vehicle " + std::to_string(v.vehicle);
      if(!(v.power >= 0.0 && v.power <= spec.power_cap)) {
         out.push_back(who + ": power outside [0, cap]");
      }
      if(v.uploads()) {
         if(!v.in_range) {
            out.push_back(who + ": uploads outside coverage");
         }
         const double needed = min_power_for_reliability(std::max(v.distance, w.config.min_distance), w.channel);
         const double c = threshold_gain(std::max(v.distance, w.config.min_distance), v.power, w.channel);
         if(v.power < needed || worst_case_success_prob(c, w.channel) < w.channel.reliability - 1e-9) {
            out.push_back(who + ": reliability constraint violated");
         }
      }
      std::vector< int > prios;
      for(const auto& e : v.queue) {
         const auto* cap = spec.capability(e.info_id);
         if(!cap) {
            out.push_back(who + ": senses info " + std::to_string(e.info_id) + " it cannot sense");
            continue;
         }
         if(!(e.frequency >= cap->freq_min && e.frequency <= cap->freq_max)) {
            out.push_back(who + ": frequency of info " + std::to_string(e.info_id) + " out of bounds");
         }
         prios.push_back(e.priority);
      }
      std::sort(prios.begin(), prios.end());
      if(std::adjacent_find(prios.begin(), prios.end()) != prios.end()) {
         out.push_back(who + ": duplicate priorities");
      }
      if(!(total_workload(v.queue) < 1.0)) {
         out.push_back(who + ": queue workload >= 1");
      }
   }
   return out;
}

// ---------------------------------------------------------------------------
// Slot evaluation.

struct UploadRecord {
   int vehicle = 0;  // index
   DeliveredInfo info;
   bool delivered = false;
};

struct SlotOutcome {
   std::vector< TwinSnapshot > snapshots;  // one per entity, in scenario order
   std::vector< TwinRecord > records;      // counted twins only
   std::vector< UploadRecord > uploads;
   RewardVector reward;
   NormalizationState norm;  // bounds after this slot
};

/// Per-slot rate seen by vehicle `s` from the current slot on, with the power and
/// bandwidth fixed at their current values; ends when the vehicle leaves coverage.
inline RateProfile rate_profile(const World& w, std::size_t s, double power, double bandwidth) {
   const auto& sc = w.sc();
   RateProfile p;
   p.origin = w.now();
   p.slot_duration = sc.slot_duration;
   for(int j = 0; j < w.config.transmission_horizon; ++j) {
      const int at = w.slot + j;
      const double dis = w.distance_of(s, at);
      if(dis > sc.edge.range) {
         break;
      }
      p.rates.push_back(
         shannon_rate(bandwidth, snr(std::max(dis, w.config.min_distance), power, w.fading_gain(s, at), w.channel)));
   }
   return p;
}

/// Evaluates `j` in the current slot against bounds `norm`, without touching `w`.
inline SlotOutcome evaluate_slot(const World& w, const JointAction& j, const NormalizationState& norm) {
   const auto& sc = w.sc();
   SlotOutcome out;
   out.norm = norm;
   const double now = w.now();
   for(const auto& v : j.vehicles) {
      if(!v.in_range || !v.uploads()) {
         continue;
      }
      const auto s = static_cast< std::size_t >(v.vehicle);
      const auto& spec = sc.vehicles[s];
      const auto profile = rate_profile(w, s, v.power, v.bandwidth);
      for(const auto& e : v.queue) {
         const auto& info = sc.infos[sc.info_index(e.info_id)];
         UploadRecord u;
         u.vehicle = v.vehicle;
         u.info.info_id = e.info_id;
         u.info.vehicle_id = spec.id;
         u.info.arrival = arrival_moment(now, e.frequency);
         u.info.updating = updating_moment(u.info.arrival, info.update_interval);
         u.info.queuing = pk_queuing_time(e, v.queue);
         const auto tx = transmit(info.size, profile, now + u.info.queuing);
         u.info.duration = tx.duration;
         u.info.energy = transmission_energy(v.power, tx.duration);
         u.info.sensing_cost = spec.capability(e.info_id)->sensing_cost;
         u.delivered = tx.completed;
         out.uploads.push_back(u);
      }
   }
   for(const auto& entity : sc.entities) {
      TwinSnapshot snap;
      snap.entity_id = entity.entity_id;
      for(const auto& u : out.uploads) {
         if(entity.requires_info(u.info.info_id)) {
            (u.delivered ? snap.delivered : snap.dropped).push_back(u.info);
         }
      }
      out.snapshots.push_back(std::move(snap));
   }
   out.records = score_slot(out.snapshots, w.metric_weights, out.norm, w.slot);
   if(!out.records.empty()) {
      double q = 0.0;
      double p = 0.0;
      for(const auto& r : out.records) {
         q += r.qdt;
         p += r.pdt;
      }
      const auto n = static_cast< double >(out.records.size());
      out.reward = {q / n, p / n};
   }
   for(auto& r : out.records) {
      r.episode = w.episode;
   }
   return out;
}

inline RewardVector difference_reward(
   const World& w, const JointAction& j, std::size_t s, const RewardVector& full_reward) {
   return full_reward - evaluate_slot(w, with_null_vehicle(j, s), w.norm).reward;
}

inline RewardVector difference_reward(const World& w, const JointAction& j, std::size_t s) {
   return difference_reward(w, j, s, evaluate_slot(w, j, w.norm).reward);
}

/// Candidate edge allocations used to normalize the edge reward: the actual one,
/// a uniform split, a split proportional to queue length and `random_count` seeded draws.
inline std::vector< std::vector< double > > edge_candidates(
   const World& w, const JointAction& j, int random_count) {
   const std::size_t n = w.vehicle_count();
   std::vector< std::vector< double > > c;
   c.push_back(j.raw_edge);
   c.emplace_back(n, 1.0);
   std::vector< double > prop(n, 0.0);
   for(std::size_t s = 0; s < n; ++s) {
      prop[s] = static_cast< double >(j.vehicles[s].gated.size());
   }
   c.push_back(prop);
   auto rng = stream_rng(w.episode_seed, 1000003ull + static_cast< std::uint64_t >(w.slot));
   std::uniform_real_distribution< double > u(0.0, 1.0);
   for(int k = 0; k < random_count; ++k) {
      std::vector< double > r(n);
      for(auto& x : r) {
         x = u(rng);
      }
      c.push_back(std::move(r));
   }
   return c;
}

/// Min-max position of the actual system reward among the candidate edge allocations
/// (vehicle raw actions held fixed). A zero range scores 1.
inline RewardVector edge_normalized_reward(
   const World& w, const JointAction& j, const RewardVector& actual, int random_count) {
   RewardVector lo = actual;
   RewardVector hi = actual;
   const auto candidates = edge_candidates(w, j, random_count);
   for(std::size_t k = 1; k < candidates.size(); ++k) {
      const auto alt = decode_joint_action(w, j.raw_vehicles, candidates[k]);
      const auto r = evaluate_slot(w, alt, w.norm).reward;
      lo = {std::min(lo.quality, r.quality), std::min(lo.profit, r.profit)};
      hi = {std::max(hi.quality, r.quality), std::max(hi.profit, r.profit)};
   }
   auto scale = [](double x, double a, double b) { return b > a ? (x - a) / (b - a) : 1.0; };
   return {scale(actual.quality, lo.quality, hi.quality), scale(actual.profit, lo.profit, hi.profit)};
}

inline RewardVector edge_normalized_reward(const World& w, const JointAction& j, int random_count) {
   return edge_normalized_reward(w, j, evaluate_slot(w, j, w.norm).reward, random_count);
}

// ---------------------------------------------------------------------------
// Stepping.

struct RewardOptions {
   bool difference = true;  // per-vehicle difference rewards
   bool edge = true;        // min-max normalized edge reward
};

struct StepResult {
   SlotOutcome outcome;
   std::vector< RewardVector > vehicle_rewards;  // empty unless requested
   RewardVector edge_reward;
};

/// Evaluates the slot, then advances `w`: bounds, edge cache and slot index.
inline StepResult step(World& w, const JointAction& j, RewardOptions opt = {}) {
   if(w.done()) {
      throw Error("step: episode already finished");
   }
   StepResult r;
   r.outcome = evaluate_slot(w, j, w.norm);
   if(opt.difference) {
      for(std::size_t s = 0; s < w.vehicle_count(); ++s) {
         r.vehicle_rewards.push_back(difference_reward(w, j, s, r.outcome.reward));
      }
   }
   if(opt.edge) {
      r.edge_reward =
         edge_normalized_reward(w, j, r.outcome.reward, w.config.edge_random_candidates);
   }
   w.norm = r.outcome.norm;
   for(const auto& u : r.outcome.uploads) {
      if(!u.delivered) {
         continue;
      }
      auto& slot = w.cache[w.sc().info_index(u.info.info_id)];
      if(!slot || slot->updating < u.info.updating) {
         slot = CachedInfo{u.info.updating};
      }
   }
   ++w.slot;
   return r;
}

// ---------------------------------------------------------------------------
// Episode trace export.

inline void write_trace_header(std::ostream& os) {
   os << "episode,slot,vehicle_id,in_range,skip,power,bandwidth,info_id,frequency,priority,"
         "queuing,duration,energy,delivered\n";
}

inline void write_trace_rows(
   std::ostream& os, const World& before, const JointAction& j, const SlotOutcome& outcome) {
   const auto& sc = before.sc();
   for(const auto& v : j.vehicles) {
      const auto& spec = sc.vehicles[static_cast< std::size_t >(v.vehicle)];
      const std::string head = std::to_string(before.episode) + ',' + std::to_string(before.slot) + ','
                               + std::to_string(spec.id) + ',' + (v.in_range ? "1" : "0") + ','
                               + to_string(v.skip) + ',' + format_double(v.power) + ','
                               + format_double(v.bandwidth);
      if(v.queue.empty()) {
         os << head << ",,,,,,,\n";
         continue;
      }
      for(const auto& e : v.queue) {
         const UploadRecord* rec = nullptr;
         for(const auto& u : outcome.uploads) {
            if(u.vehicle == v.vehicle && u.info.info_id == e.info_id) {
               rec = &u;
            }
         }
         os << head << ',' << e.info_id << ',' << format_double(e.frequency) << ',' << e.priority;
         if(rec) {
            os << ',' << format_double(rec->info.queuing) << ',' << format_double(rec->info.duration)
               << ',' << format_double(rec->info.energy) << ',' << (rec->delivered ? 1 : 0) << '\n';
         } else {
            os << ",,,,\n";
         }
      }
   }
}

}  // namespace dtvec
