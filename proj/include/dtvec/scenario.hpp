#pragma once

// Static world description: information types, vehicles and their trajectories,
// the edge node, and the physical entities whose twins the edge maintains.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "dtvec/error.hpp"

namespace dtvec {

struct Point {
   double x = 0.0;
   double y = 0.0;
   bool operator==(const Point&) const = default;
};

inline double distance(const Point& a, const Point& b) {
   return std::hypot(a.x - b.x, a.y - b.y);
}

struct TrajectoryPoint {
   double time = 0.0;  // seconds
   Point position;
   bool operator==(const TrajectoryPoint&) const = default;
};

using Trajectory = std::vector<TrajectoryPoint>;

/// Linear interpolation between samples, clamped to the first/last sample outside them.
inline Point position_at(const Trajectory& trajectory, double time) {
   if(trajectory.empty()) {
      throw Error("position_at: empty trajectory");
   }
   if(time <= trajectory.front().time) {
      return trajectory.front().position;
   }
   if(time >= trajectory.back().time) {
      return trajectory.back().position;
   }
   auto upper = std::upper_bound(
      trajectory.begin(), trajectory.end(), time, [](double t, const TrajectoryPoint& p) {
         return t < p.time;
      });
   const auto& hi = *upper;
   const auto& lo = *(upper - 1);
   if(time == lo.time) {
      return lo.position;
   }
   const double f = (time - lo.time) / (hi.time - lo.time);
   return {lo.position.x + f * (hi.position.x - lo.position.x),
           lo.position.y + f * (hi.position.y - lo.position.y)};
}

struct InfoSpec {
   int id = 0;
   int type_tag = 0;
   double update_interval = 1.0;  // seconds
   double size = 1.0;             // bits
};

struct SensingCapability {
   int info_id = 0;
   double freq_min = 1.0;      // Hz
   double freq_max = 1.0;      // Hz
   double sensing_cost = 0.0;  // joules per slot while sensing
};

struct VehicleSpec {
   int id = 0;
   Trajectory trajectory;
   std::vector<SensingCapability> capabilities;
   double power_cap = 0.1;  // watts

   const SensingCapability* capability(int info_id) const {
      for(const auto& c : capabilities) {
         if(c.info_id == info_id) {
            return &c;
         }
      }
      return nullptr;
   }
};

struct EdgeSpec {
   Point location;
   double range = 500.0;      // meters
   double bandwidth = 2.0e6;  // hertz
};

struct EntityAssociation {
   int entity_id = 0;
   std::vector<int> required_info;

   bool requires_info(int info_id) const {
      return std::find(required_info.begin(), required_info.end(), info_id)
             != required_info.end();
   }
};

struct Scenario {
   int slot_count = 60;
   double slot_duration = 1.0;
   std::vector<InfoSpec> infos;
   std::vector<VehicleSpec> vehicles;
   EdgeSpec edge;
   std::vector<EntityAssociation> entities;
   std::uint64_t seed = 0;

   /// Throws ConfigError on the first violated invariant.
   void validate() const {
      if(slot_count < 1) {
         throw ConfigError("scenario: slot_count must be >= 1");
      }
      if(!(slot_duration > 0.0)) {
         throw ConfigError("scenario: slot_duration must be > 0");
      }
      if(!(edge.range > 0.0) || !(edge.bandwidth > 0.0)) {
         throw ConfigError("scenario: edge range and bandwidth must be > 0");
      }
      std::set< int > ids;
      for(const auto& info : infos) {
         if(!(info.update_interval > 0.0) || !(info.size > 0.0)) {
            throw ConfigError(
               "scenario: info " + std::to_string(info.id)
               + " needs positive update interval and size");
         }
         if(!ids.insert(info.id).second) {
            throw ConfigError("scenario: duplicate info id " + std::to_string(info.id));
         }
      }
      for(const auto& v : vehicles) {
         if(v.trajectory.empty()) {
            throw ConfigError("scenario: vehicle " + std::to_string(v.id) + " has no trajectory");
         }
         for(std::size_t i = 1; i < v.trajectory.size(); ++i) {
            if(!(v.trajectory[i].time > v.trajectory[i - 1].time)) {
               throw ConfigError(
                  "scenario: vehicle " + std::to_string(v.id)
                  + " trajectory times not strictly increasing");
            }
         }
         if(!(v.power_cap > 0.0)) {
            throw ConfigError("scenario: vehicle " + std::to_string(v.id) + " power_cap must be > 0");
         }
         std::set< int > seen;
         for(const auto& c : v.capabilities) {
            if(!ids.contains(c.info_id)) {
               throw ConfigError("scenario: capability for unknown info " + std::to_string(c.info_id));
            }
            if(!seen.insert(c.info_id).second) {
               throw ConfigError(
                  "scenario: vehicle " + std::to_string(v.id) + " has two capabilities for info "
                  + std::to_string(c.info_id));
            }
            if(!(c.freq_min > 0.0) || c.freq_min > c.freq_max || c.sensing_cost < 0.0) {
               throw ConfigError(
                  "scenario: vehicle " + std::to_string(v.id) + " has an invalid capability for info "
                  + std::to_string(c.info_id));
            }
         }
      }
      for(const auto& e : entities) {
         if(e.required_info.empty()) {
            throw ConfigError("scenario: entity " + std::to_string(e.entity_id) + " requires nothing");
         }
         for(int d : e.required_info) {
            if(!ids.contains(d)) {
               throw ConfigError(
                  "scenario: entity " + std::to_string(e.entity_id) + " requires unknown info "
                  + std::to_string(d));
            }
         }
      }
   }

   double slot_time(int t) const { return t * slot_duration; }

   Point vehicle_position(std::size_t vehicle, double time) const {
      return position_at(vehicles.at(vehicle).trajectory, time);
   }

   double vehicle_distance(std::size_t vehicle, double time) const {
      return distance(vehicle_position(vehicle, time), edge.location);
   }

   std::size_t info_index(int info_id) const {
      for(std::size_t i = 0; i < infos.size(); ++i) {
         if(infos[i].id == info_id) {
            return i;
         }
      }
      throw Error("unknown info id " + std::to_string(info_id));
   }
};

/// Ids of the vehicles whose distance to the edge at slot `t` is within range.
inline std::vector< int > vehicles_in_range(const Scenario& scenario, int t) {
   std::vector< int > ids;
   const double time = scenario.slot_time(t);
   for(std::size_t s = 0; s < scenario.vehicles.size(); ++s) {
      if(scenario.vehicle_distance(s, time) <= scenario.edge.range) {
         ids.push_back(scenario.vehicles[s].id);
      }
   }
   return ids;
}

// ---------------------------------------------------------------------------
// Trajectory CSV: header `vehicle_id,time_s,x_m,y_m`, one sample per row.

namespace detail {

inline std::string_view trim(std::string_view s) {
   while(!s.empty() && (s.front() == ' ' || s.front() == '\t')) {
      s.remove_prefix(1);
   }
   while(!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
      s.remove_suffix(1);
   }
   return s;
}

inline std::vector< std::string_view > split(std::string_view line, char sep) {
   std::vector< std::string_view > out;
   std::size_t start = 0;
   while(true) {
      auto pos = line.find(sep, start);
      out.push_back(trim(line.substr(start, pos == std::string_view::npos ? pos : pos - start)));
      if(pos == std::string_view::npos) {
         break;
      }
      start = pos + 1;
   }
   return out;
}

template < typename T >
T parse_number(std::string_view field, std::size_t line, const char* what) {
   T value{};
   auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
   if(ec != std::errc{} || ptr != field.data() + field.size()) {
      throw ParseError(
         "line " + std::to_string(line) + ": cannot parse " + what + " from '" + std::string(field)
            + "'",
         line);
   }
   return value;
}

}  // namespace detail

inline std::map< int, Trajectory > parse_trajectories(std::istream& in) {
   std::map< int, Trajectory > out;
   std::map< int, std::size_t > last_line;
   std::string line;
   std::size_t line_no = 0;
   bool header_seen = false;
   while(std::getline(in, line)) {
      ++line_no;
      auto view = detail::trim(line);
      if(view.empty()) {
         continue;
      }
      if(!header_seen) {
         if(line_no == 1 && view.size() >= 3 && static_cast< unsigned char >(view[0]) == 0xEF) {
            view.remove_prefix(3);  // UTF-8 BOM
         }
         auto cols = detail::split(view, ',');
         if(cols.size() != 4 || cols[0] != "vehicle_id" || cols[1] != "time_s" || cols[2] != "x_m"
            || cols[3] != "y_m") {
            throw ParseError(
               "line " + std::to_string(line_no)
                  + ": expected header 'vehicle_id,time_s,x_m,y_m'",
               line_no);
         }
         header_seen = true;
         continue;
      }
      auto cols = detail::split(view, ',');
      if(cols.size() != 4) {
         throw ParseError(
            "line " + std::to_string(line_no) + ": expected 4 fields, got "
               + std::to_string(cols.size()),
            line_no);
      }
      const int id = detail::parse_number< int >(cols[0], line_no, "vehicle_id");
      const double t = detail::parse_number< double >(cols[1], line_no, "time_s");
      const double x = detail::parse_number< double >(cols[2], line_no, "x_m");
      const double y = detail::parse_number< double >(cols[3], line_no, "y_m");
      auto& traj = out[id];
      if(!traj.empty() && !(t > traj.back().time)) {
         throw ParseError(
            "line " + std::to_string(line_no) + ": vehicle " + std::to_string(id) + " time "
               + std::string(cols[1]) + " does not increase (previous sample on line "
               + std::to_string(last_line[id]) + ")",
            line_no);
      }
      traj.push_back({t, {x, y}});
      last_line[id] = line_no;
   }
   if(!header_seen) {
      throw ParseError("trajectory file is empty");
   }
   if(out.empty()) {
      throw ParseError("trajectory file has a header but no samples");
   }
   return out;
}

inline std::map< int, Trajectory > load_trajectories(const std::string& path) {
   std::ifstream in(path);
   if(!in) {
      throw ParseError("cannot open trajectory file '" + path + "'");
   }
   return parse_trajectories(in);
}

/// Random-waypoint paths inside [0,width]x[0,height], sampled once per second.
inline std::map< int, Trajectory > generate_synthetic_trajectories(
   std::uint64_t seed,
   int n_vehicles,
   double width,
   double height,
   double duration,
   double speed_min,
   double speed_max) {
   std::mt19937_64 rng(seed);
   std::uniform_real_distribution< double > ux(0.0, width);
   std::uniform_real_distribution< double > uy(0.0, height);
   std::uniform_real_distribution< double > uspeed(speed_min, speed_max);
   std::map< int, Trajectory > out;
   const int steps = std::max(1, static_cast< int >(std::ceil(duration)));
   for(int id = 0; id < n_vehicles; ++id) {
      Point pos{ux(rng), uy(rng)};
      Point waypoint{ux(rng), uy(rng)};
      double speed = speed_max > speed_min ? uspeed(rng) : speed_min;
      Trajectory traj;
      traj.push_back({0.0, pos});
      for(int k = 1; k <= steps; ++k) {
         double budget = speed;
         // Walk along waypoints until this second's travel budget is spent.
         for(int guard = 0; budget > 0.0 && guard < 16; ++guard) {
            const double d = distance(pos, waypoint);
            if(d > budget) {
               pos.x += (waypoint.x - pos.x) * budget / d;
               pos.y += (waypoint.y - pos.y) * budget / d;
               budget = 0.0;
            } else {
               pos = waypoint;
               budget -= d;
               waypoint = {ux(rng), uy(rng)};
               speed = speed_max > speed_min ? uspeed(rng) : speed_min;
            }
         }
         pos.x = std::clamp(pos.x, 0.0, width);
         pos.y = std::clamp(pos.y, 0.0, height);
         traj.push_back({static_cast< double >(k), pos});
      }
      out.emplace(id, std::move(traj));
   }
   return out;
}

// ---------------------------------------------------------------------------
// Desk-scale scenario used by the CLI defaults and the tests.

struct DeskScenarioOptions {
   int vehicles = 5;
   int infos = 10;
   int entities = 6;
   int slot_count = 60;
   double slot_duration = 1.0;
   double area_width = 1000.0;
   double area_height = 1000.0;
   double edge_range = 500.0;
   double bandwidth = 2.0e6;
   int required_info = 4;  // per entity
   double speed_min = 5.0;
   double speed_max = 15.0;
   double power_cap = 0.1;
   double capability_fraction = 0.6;
   double size_min = 1.0e6;
   double size_max = 4.0e6;
   double interval_min = 1.0;
   double interval_max = 4.0;
   double freq_min_lo = 0.1;
   double freq_min_hi = 0.3;
   double freq_span_lo = 0.3;
   double freq_span_hi = 0.8;
   double cost_min = 0.02;
   double cost_max = 0.2;
   double trajectory_padding = 20.0;  // seconds of path past the last slot
   std::string trajectory_csv;        // optional; replaces synthetic paths
   std::uint64_t seed = 1;
};

/// Each stream gets its own generator so that changing one knob (say, the number of
/// required infos) leaves everything else bit-identical.
inline std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t stream) {
   std::seed_seq seq{static_cast< std::uint32_t >(seed), static_cast< std::uint32_t >(seed >> 32),
                     static_cast< std::uint32_t >(stream), 0x5eedu};
   return std::mt19937_64(seq);
}

inline Scenario make_desk_scenario(const DeskScenarioOptions& opt) {
   if(opt.vehicles < 1 || opt.infos < 1 || opt.entities < 1) {
      throw ConfigError("desk scenario needs at least one vehicle, info and entity");
   }
   Scenario sc;
   sc.slot_count = opt.slot_count;
   sc.slot_duration = opt.slot_duration;
   sc.seed = opt.seed;
   sc.edge = {{opt.area_width / 2.0, opt.area_height / 2.0}, opt.edge_range, opt.bandwidth};

   auto info_rng = stream_rng(opt.seed, 1);
   std::uniform_real_distribution< double > usize(opt.size_min, opt.size_max);
   std::uniform_real_distribution< double > uinterval(opt.interval_min, opt.interval_max);
   for(int d = 0; d < opt.infos; ++d) {
      sc.infos.push_back({d, d % 4, uinterval(info_rng), usize(info_rng)});
   }

   std::map< int, Trajectory > trajectories;
   if(!opt.trajectory_csv.empty()) {
      trajectories = load_trajectories(opt.trajectory_csv);
   } else {
      trajectories = generate_synthetic_trajectories(
         stream_rng(opt.seed, 2)(),
         opt.vehicles,
         opt.area_width,
         opt.area_height,
         opt.slot_count * opt.slot_duration + opt.trajectory_padding,
         opt.speed_min,
         opt.speed_max);
   }

   auto cap_rng = stream_rng(opt.seed, 3);
   std::uniform_real_distribution< double > u01(0.0, 1.0);
   std::uniform_real_distribution< double > ufmin(opt.freq_min_lo, opt.freq_min_hi);
   std::uniform_real_distribution< double > ufspan(opt.freq_span_lo, opt.freq_span_hi);
   std::uniform_real_distribution< double > ucost(opt.cost_min, opt.cost_max);
   for(auto& [id, traj] : trajectories) {
      VehicleSpec v;
      v.id = id;
      v.trajectory = traj;
      v.power_cap = opt.power_cap;
      for(int d = 0; d < opt.infos; ++d) {
         const double draw = u01(cap_rng);
         const double fmin = ufmin(cap_rng);
         const double span = ufspan(cap_rng);
         const double cost = ucost(cap_rng);
         if(draw < opt.capability_fraction) {
            v.capabilities.push_back({d, fmin, fmin + span, cost});
         }
      }
      if(v.capabilities.empty()) {
         v.capabilities.push_back({id % opt.infos, ufmin(cap_rng), 1.0, ucost(cap_rng)});
      }
      sc.vehicles.push_back(std::move(v));
   }

   auto ent_rng = stream_rng(opt.seed, 4);
   const int k = std::clamp(opt.required_info, 1, opt.infos);
   for(int e = 0; e < opt.entities; ++e) {
      std::vector< int > perm(opt.infos);
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), ent_rng);
      perm.resize(k);
      sc.entities.push_back({e, perm});
   }
   sc.validate();
   return sc;
}

}  // namespace dtvec
