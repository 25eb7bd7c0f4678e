#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "epi/seqdata.hpp"

// Synthetic peptide corpus with planted statistical structure, used by the
// bundled demo data and the integration tests: positions are independent,
// cysteine is depleted everywhere, and the final position is enriched in
// aromatics (F/W/Y). Positive-labeled records additionally start K/R-rich.

namespace epi::toy {

// Residue distribution shared by the non-final positions (C at ~1/10 of its
// natural frequency).
const std::array<double, 20>& background_distribution();

// Final-position distribution: 0.45 extra mass on F/W/Y over the background.
const std::array<double, 20>& final_position_distribution();

// First-position distribution for positive records (K/R boosted).
const std::array<double, 20>& positive_start_distribution();

// Length weights for lengths 6..11, mode at 8-9.
const std::array<double, 6>& length_weights();

// n labeled records (alternating positive/negative), deterministic in seed.
seqdata::Dataset make_corpus(std::size_t n, std::uint64_t seed);

// Sequence-only sampler sharing the same planted distributions. A custom
// weight vector (lengths 6..11) overrides the default length mix; a
// concentrated mix keeps per-length subsets large enough for low-bias
// mutual-information estimates.
std::vector<std::string> sample_sequences(
    std::size_t n, std::uint64_t seed,
    const std::array<double, 6>& weights = length_weights());

// Writes a TSV table for the ingest stage. with_noise adds rows that the
// paper-style filter chain should drop or reject: non-canonical residues,
// non-human hosts, conformational records, over-length sequences, and
// duplicates.
void write_toy_table(const std::string& path, std::size_t n, std::uint64_t seed,
                     bool with_noise);

}  // namespace epi::toy
