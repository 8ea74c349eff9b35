#pragma once

#include <optional>
#include <string>
#include <string_view>

namespace isostruct {

inline constexpr int kMaxAtomicNumber = 118;

struct ElementInfo {
  int atomic_number;
  std::string_view symbol;
  double mass;              // most abundant isotope, amu
  double covalent_radius;   // Å (single-bond radii)
  int valence;              // typical neutral valence; 0 when not tabulated
};

/// Table lookup; throws Error(UnknownElement) outside 1..118.
const ElementInfo& element(int atomic_number);

/// Case-insensitive symbol lookup ("C", "cl", "BR"); throws UnknownElement.
int atomic_number_of(std::string_view symbol);

std::optional<int> try_atomic_number_of(std::string_view symbol);

/// Elements whose rare isotopologues are abundant enough to measure:
/// B, C, N, O, Si, S, Cl, Br, Hg.
bool is_naturally_abundant(int atomic_number);

/// Default mass change (amu) for singly-substituted isotopologues of the
/// abundant elements (e.g. 12C -> 13C is +1.003355). Empty for others.
std::optional<double> default_isotope_delta(int atomic_number);

inline bool is_hydrogen(int atomic_number) { return atomic_number == 1; }

}  // namespace isostruct
