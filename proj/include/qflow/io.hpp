#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "qflow/field.hpp"
#include "qflow/lddmm.hpp"
#include "qflow/phantom.hpp"

namespace qflow::io {

enum class ChannelKind { Scalar, Vec3, Samples, Bfor };

/// In-memory image of a QFLOW1 volume file.
///
///   QFLOW1
///   dims nx ny nz
///   spacing hx hy hz
///   origin ox oy oz
///   channels scalar | vec3 | samples K | bfor L Nb tau
///   (bfor only) one "n l m" line per channel, then "boundary v_1 ... v_K"
///   end
///
/// followed by nx*ny*nz*K little-endian float64 values, x fastest, channels
/// innermost. Header doubles are printed with 17 significant digits.
struct Volume {
  field::Grid grid;
  ChannelKind kind = ChannelKind::Scalar;
  int channels = 1;
  std::optional<bfor::BasisSpec> spec;
  std::vector<double> boundary;
  std::vector<double> data;

  friend bool operator==(const Volume&, const Volume&) = default;
};

Volume read_volume(const std::filesystem::path& path);
/// Writes through a temporary file so a failure leaves no partial output.
void write_volume(const std::filesystem::path& path, const Volume& v);

Volume to_volume(const field::CoefficientField& f);
Volume to_volume(const field::ScalarField& f);
/// Deformations are stored as displacement phi(x) - x.
Volume to_volume(const field::DeformationField& phi);
Volume samples_volume(const field::Grid& grid, int samples, std::vector<double> data);

field::CoefficientField coefficient_field(const Volume& v);
field::ScalarField scalar_field(const Volume& v);
field::DeformationField deformation_field(const Volume& v);

/// Binary momentum file: a text header (steps, sigma, stride, points) then
/// control points and alpha[t][i] as float64 triples.
void write_momentum(const std::filesystem::path& path, const lddmm::MomentumTrajectory& m);
lddmm::MomentumTrajectory read_momentum(const std::filesystem::path& path);

/// Scheme text file: one "qx qy qz b" row per sample; '#' starts a comment.
void write_scheme(const std::filesystem::path& path, const phantom::EncodingScheme& s);
phantom::EncodingScheme read_scheme(const std::filesystem::path& path);

/// key=value lines; blank lines and '#' comments ignored.
std::map<std::string, std::string> read_config(const std::filesystem::path& path);

}  // namespace qflow::io
