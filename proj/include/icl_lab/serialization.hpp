#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include "icl_lab/hmm.hpp"
#include "icl_lab/operators.hpp"

namespace icl {

// Plain-text model files: "key value..." lines followed by matrix blocks.
// Reals are written with 17 significant digits, so a write/read cycle
// reproduces every double bit-for-bit.

void write_hmm(std::ostream& out, const Hmm& hmm);
Hmm read_hmm(std::istream& in);
void save_hmm(const std::filesystem::path& path, const Hmm& hmm);
Hmm load_hmm(const std::filesystem::path& path);

void write_moment(std::ostream& out, const MomentMatrix& moment);
MomentMatrix read_moment(std::istream& in);

/// "%.17g" formatting.
std::string format_real(double value);

}  // namespace icl
