#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

namespace proptk {

// The 18 propaganda techniques of the shared-task annotation scheme, ordered
// by training-corpus frequency (most frequent first). The enum order doubles
// as the tie-break rank when overlapping spans compete during BIO encoding.
enum class Technique : int {
  loaded_language = 0,
  name_calling_labeling,
  repetition,
  doubt,
  exaggeration_minimisation,
  flag_waving,
  appeal_to_fear_prejudice,
  causal_oversimplification,
  slogans,
  appeal_to_authority,
  black_and_white_fallacy,
  thought_terminating_cliches,
  whataboutism,
  reductio_ad_hitlerum,
  red_herring,
  bandwagon,
  straw_men,
  obfuscation_intentional_vagueness_confusion,
};

inline constexpr int technique_count = 18;

inline const std::array<std::string_view, technique_count>& technique_names() {
  static const std::array<std::string_view, technique_count> names = {
      "Loaded Language",
      "Name Calling,Labeling",
      "Repetition",
      "Doubt",
      "Exaggeration,Minimisation",
      "Flag-Waving",
      "Appeal to Fear/Prejudice",
      "Causal Oversimplification",
      "Slogans",
      "Appeal to Authority",
      "Black-and-White Fallacy",
      "Thought-terminating Cliches",
      "Whataboutism",
      "Reductio ad hitlerum",
      "Red Herring",
      "Bandwagon",
      "Straw Men",
      "Obfuscation,Intentional Vagueness,Confusion",
  };
  return names;
}

inline std::string_view to_string(Technique t) {
  return technique_names()[static_cast<int>(t)];
}

// The inventory is closed: unknown names are the caller's error to report.
inline std::optional<Technique> parse_technique(std::string_view name) {
  const auto& names = technique_names();
  for (int i = 0; i < technique_count; ++i)
    if (names[i] == name) return static_cast<Technique>(i);
  return std::nullopt;
}

// Lower rank = more frequent in the training corpus.
inline int frequency_rank(Technique t) { return static_cast<int>(t); }

}  // namespace proptk
