#pragma once

namespace kpz::fredholm {

inline constexpr double kAiryDomainMin = -15.0;
inline constexpr double kAiryDomainMax = 30.0;

/// Airy function Ai(x) on [-15, 30], absolute error below 1e-10.
/// Throws std::domain_error outside that range.
double airy_ai(double x);

/// Same evaluation without the range check. Valid for any x >= -15 and used by
/// the kernel code, whose shifted arguments leave the public range on the
/// super-exponentially small side.
double airy_ai_unchecked(double x);

}  // namespace kpz::fredholm
