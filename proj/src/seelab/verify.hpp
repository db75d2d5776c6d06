#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "seelab/commands.hpp"

namespace seelab {

struct PropertyResult {
  std::string id;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

struct VerifyOptions {
  Mutation mutation = Mutation::None;
  std::uint64_t seed = 0;
  /// Restrict to these ids; all when empty.
  std::vector<std::string> only;
};

struct VerifyReport {
  std::vector<PropertyResult> results;
  bool all_passed() const;
};

/// Stable identifiers, grouped by module prefix.
std::vector<std::string> property_ids();

VerifyReport run_verify(const VerifyOptions& options);

std::string verify_report_json(const VerifyReport& report);

}  // namespace seelab
