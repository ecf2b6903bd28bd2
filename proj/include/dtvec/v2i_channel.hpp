#pragma once

// V2I link model: received SNR, distributionally robust reliability, Shannon rate,
// upload duration over a piecewise-constant rate and the resulting energy.

#include <cmath>
#include <optional>
#include <vector>

#include "dtvec/error.hpp"

namespace dtvec {

struct ChannelParams {
   double noise_power = 1.0e-12;  // W (-90 dBm)
   double antenna_const = 1.0;
   double pathloss_exp = 3.0;
   double fading_mean = 2.0;  // mean of |h|^2
   double fading_var = 0.4;   // variance of |h|^2
   double snr_target = 10.0;
   double reliability = 0.9;

   void validate() const {
      if(!(noise_power > 0.0) || !(antenna_const > 0.0) || !(pathloss_exp > 0.0)
         || !(fading_mean > 0.0) || !(fading_var > 0.0) || !(snr_target > 0.0)) {
         throw ConfigError("channel: all parameters must be positive");
      }
      if(!(reliability > 0.0 && reliability < 1.0)) {
         throw ConfigError("channel: reliability must lie in (0,1)");
      }
   }
};

inline double snr(double dis, double power, double fading_gain, const ChannelParams& p) {
   return (1.0 / p.noise_power) * fading_gain * p.antenna_const * std::pow(dis, -p.pathloss_exp)
          * power;
}

/// Smallest probability, over every gain law with the configured mean and variance,
/// that the gain reaches `threshold_gain` (one-sided Chebyshev bound, which is tight).
inline double worst_case_success_prob(double threshold_gain, const ChannelParams& p) {
   const double margin = p.fading_mean - threshold_gain;
   if(margin <= 0.0) {
      return 0.0;
   }
   return margin * margin / (p.fading_var + margin * margin);
}

/// Gain the fading must reach for `power` to hit the SNR target at distance `dis`.
inline double threshold_gain(double dis, double power, const ChannelParams& p) {
   return p.snr_target * p.noise_power * std::pow(dis, p.pathloss_exp) / (p.antenna_const * power);
}

inline double min_power_for_reliability(double dis, const ChannelParams& p) {
   const double margin = std::sqrt(p.reliability * p.fading_var / (1.0 - p.reliability));
   if(!(p.fading_mean > margin)) {
      throw InfeasibleError("reliability target cannot be met by any finite power");
   }
   return p.snr_target * p.noise_power * std::pow(dis, p.pathloss_exp)
          / (p.antenna_const * (p.fading_mean - margin));
}

inline double shannon_rate(double bandwidth, double snr_value) {
   return bandwidth * std::log2(1.0 + snr_value);
}

/// Piecewise-constant rate: `rates[i]` (bits/s) holds on [origin + i*slot, origin + (i+1)*slot).
struct RateProfile {
   double origin = 0.0;
   double slot_duration = 1.0;
   std::vector< double > rates;

   double end() const { return origin + slot_duration * static_cast< double >(rates.size()); }
};

struct TransmissionResult {
   bool completed = false;
   double duration = 0.0;  // to completion, or until the profile ran out
};

/// Time needed to push `size` bits starting at `start`; `completed` is false when the
/// profile ends first (the vehicle left coverage), in which case `duration` is the time
/// spent transmitting before that.
inline TransmissionResult transmit(double size, const RateProfile& profile, double start) {
   double remaining = size;
   double now = start;
   if(now < profile.origin) {
      now = profile.origin;
   }
   auto idx = static_cast< std::size_t >(std::floor((now - profile.origin) / profile.slot_duration));
   for(; idx < profile.rates.size(); ++idx) {
      const double slot_end = profile.origin + profile.slot_duration * static_cast< double >(idx + 1);
      if(slot_end <= now) {
         continue;
      }
      const double rate = profile.rates[idx];
      const double span = slot_end - now;
      if(rate > 0.0 && rate * span >= remaining) {
         return {true, now + remaining / rate - start};
      }
      remaining -= rate * span;
      now = slot_end;
   }
   return {false, std::max(0.0, now - start)};
}

inline std::optional< double > transmission_duration(
   double size, const RateProfile& profile, double start) {
   auto r = transmit(size, profile, start);
   if(!r.completed) {
      return std::nullopt;
   }
   return r.duration;
}

inline double transmission_energy(double power, double duration) {
   return power * duration;
}

}  // namespace dtvec
