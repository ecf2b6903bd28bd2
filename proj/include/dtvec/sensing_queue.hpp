#pragma once

// Per-vehicle sensing and priority-upload queue: sample instants, workloads and
// the priority-queue delay formula, plus a discrete-event simulator to check it.

#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dtvec/error.hpp"

namespace dtvec {

/// First two moments of the time it takes to upload one item.
struct UploadTimeModel {
   double mean = 1.0;      // seconds
   double variance = 0.0;  // seconds^2

   double second_moment() const { return variance + mean * mean; }
};

struct QueueEntry {
   int info_id = 0;
   double frequency = 1.0;  // Hz
   int priority = 0;        // larger is served first
   UploadTimeModel upload_time;

   double load() const { return frequency * upload_time.mean; }
};

/// Latest sampling instant at or before `t` for a sensor running at `freq`.
inline double arrival_moment(double t, double freq) {
   // The nudge keeps products such as 3 * (1/3) from flooring one period short.
   const double k = std::floor(t * freq + 1e-9);
   return std::min(k / freq, t);
}

/// Latest source update at or before `arrival` for data refreshed every `update_interval`.
inline double updating_moment(double arrival, double update_interval) {
   const double k = std::floor(arrival / update_interval + 1e-9);
   return std::min(k * update_interval, arrival);
}

inline double total_workload(std::span< const QueueEntry > entries) {
   double rho = 0.0;
   for(const auto& e : entries) {
      rho += e.frequency * e.upload_time.mean;
   }
   return rho;
}

/// Load of the entries served strictly before `entry`.
inline double workload_ahead(const QueueEntry& entry, std::span< const QueueEntry > entries) {
   double rho = 0.0;
   for(const auto& e : entries) {
      if(e.priority > entry.priority) {
         rho += e.frequency * e.upload_time.mean;
      }
   }
   return rho;
}

/// Mean delay of `entry` before its own upload completes, excluding its own mean upload
/// time. The β terms carry the second moment of the upload time.
inline double pk_queuing_time(const QueueEntry& entry, std::span< const QueueEntry > entries) {
   const double rho_ahead = workload_ahead(entry, entries);
   const double alpha = entry.upload_time.mean;
   const double own = entry.frequency * alpha;
   if(!(rho_ahead + own < 1.0)) {
      throw UnstableQueueError(
         "info " + std::to_string(entry.info_id) + ": workload " + std::to_string(rho_ahead + own)
         + " >= 1");
   }
   double residual = entry.frequency * entry.upload_time.second_moment();
   for(const auto& e : entries) {
      if(e.priority > entry.priority) {
         residual += e.frequency * e.upload_time.second_moment();
      }
   }
   const double q =
      (1.0 / (1.0 - rho_ahead)) * (alpha + residual / (2.0 * (1.0 - rho_ahead - own))) - alpha;
   return std::max(q, 0.0);
}

// ---------------------------------------------------------------------------
// Discrete-event oracle.

enum class QueueDiscipline {
   preemptive_resume,  // a higher-priority arrival interrupts the upload in progress
   non_preemptive,     // the upload in progress always finishes
};

namespace detail {

/// Two-point law with the requested mean and variance, supported on [0, inf).
class TwoPointService {
  public:
   explicit TwoPointService(const UploadTimeModel& m) {
      const double sd = std::sqrt(m.variance);
      if(m.variance <= m.mean * m.mean) {
         low_ = m.mean - sd;
         high_ = m.mean + sd;
         p_low_ = 0.5;
      } else {
         low_ = 0.0;
         p_low_ = m.variance / (m.mean * m.mean + m.variance);
         high_ = m.mean / (1.0 - p_low_);
      }
   }

   template < typename Rng >
   double operator()(Rng& rng) const {
      if(low_ == high_) {
         return low_;
      }
      return std::uniform_real_distribution< double >(0.0, 1.0)(rng) < p_low_ ? low_ : high_;
   }

  private:
   double low_ = 0.0;
   double high_ = 0.0;
   double p_low_ = 0.5;
};

}  // namespace detail

/// Simulates a multi-class priority queue with Poisson arrivals and returns, per entry,
/// the mean of (departure - arrival - own service time) over `n_arrivals` customers.
inline std::vector< double > simulate_queue_oracle(
   std::span< const QueueEntry > entries,
   std::uint64_t n_arrivals,
   std::uint64_t seed,
   QueueDiscipline discipline = QueueDiscipline::preemptive_resume) {
   if(n_arrivals == 0) {
      throw Error("simulate_queue_oracle: n_arrivals must be positive");
   }
   if(entries.empty()) {
      return {};
   }
   if(!(total_workload(entries) < 1.0)) {
      throw UnstableQueueError("simulate_queue_oracle: total workload >= 1");
   }
   const std::size_t n = entries.size();
   for(const auto& e : entries) {
      if(!(e.frequency > 0.0)) {
         throw Error("simulate_queue_oracle: every class needs a positive arrival rate");
      }
   }

   struct Job {
      double arrival;
      double service;
      double remaining;
   };

   std::mt19937_64 rng(seed);
   std::vector< detail::TwoPointService > service;
   std::vector< std::exponential_distribution< double > > interarrival;
   for(const auto& e : entries) {
      service.emplace_back(e.upload_time);
      interarrival.emplace_back(e.frequency);
   }
   std::vector< double > next_arrival(n);
   for(std::size_t i = 0; i < n; ++i) {
      next_arrival[i] = interarrival[i](rng);
   }
   std::vector< std::deque< Job > > queues(n);
   std::vector< double > delay_sum(n, 0.0);
   std::vector< std::uint64_t > served(n, 0);
   std::uint64_t arrived = 0;
   std::size_t in_service = n;  // class whose head is being served; n means idle
   double now = 0.0;
   constexpr double inf = std::numeric_limits< double >::infinity();

   auto highest_waiting = [&]() {
      std::size_t best = n;
      for(std::size_t i = 0; i < n; ++i) {
         if(!queues[i].empty() && (best == n || entries[i].priority > entries[best].priority)) {
            best = i;
         }
      }
      return best;
   };

   while(true) {
      if(discipline == QueueDiscipline::preemptive_resume || in_service == n) {
         in_service = highest_waiting();
      }
      std::size_t next_class = n;
      double t_arrival = inf;
      if(arrived < n_arrivals) {
         for(std::size_t i = 0; i < n; ++i) {
            if(next_arrival[i] < t_arrival) {
               t_arrival = next_arrival[i];
               next_class = i;
            }
         }
      }
      const double t_done = in_service == n ? inf : now + queues[in_service].front().remaining;
      if(t_arrival == inf && t_done == inf) {
         break;
      }
      if(t_arrival < t_done) {
         if(in_service != n) {
            queues[in_service].front().remaining -= t_arrival - now;
         }
         now = t_arrival;
         const double s = service[next_class](rng);
         queues[next_class].push_back({now, s, s});
         ++arrived;
         next_arrival[next_class] = now + interarrival[next_class](rng);
      } else {
         now = t_done;
         const Job job = queues[in_service].front();
         queues[in_service].pop_front();
         delay_sum[in_service] += now - job.arrival - job.service;
         ++served[in_service];
         in_service = n;
      }
   }

   std::vector< double > means(n, 0.0);
   for(std::size_t i = 0; i < n; ++i) {
      means[i] = served[i] ? delay_sum[i] / static_cast< double >(served[i]) : 0.0;
   }
   return means;
}

}  // namespace dtvec
