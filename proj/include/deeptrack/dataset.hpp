// SPDX-License-Identifier: Apache-2.0
//
// Sequence persistence (the DTSEQ1 format), dataset manifests and import of
// external planar scan logs.
//
// DTSEQ1, little-endian:
//   "DTSEQ1" | u32 M | u32 cell_size (integer millimetres) | u32 frames
//   | u32 flags (bit 0: truth planes present)
//   per frame: vis plane | occ plane | f64 x, f64 y, f64 theta of T_{k,k-1}
//              | truth plane (when flagged)
// A plane is M*M cells, row-major, packed 8 per byte with the first cell in
// the most significant bit; ceil(M*M / 8) bytes.

#ifndef DEEPTRACK_DATASET_HPP_
#define DEEPTRACK_DATASET_HPP_

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "deeptrack/geometry.hpp"
#include "deeptrack/simulator.hpp"

namespace deeptrack {

std::size_t packed_plane_bytes(int size_cells);
std::vector<std::uint8_t> pack_plane(const BinaryGrid& grid);
BinaryGrid unpack_plane(const std::vector<std::uint8_t>& bytes, int size_cells);

/// Throws std::invalid_argument when the cell size is not a whole number of
/// millimetres (it could not round-trip).
void write_sequence(const SequenceBatch& batch, std::ostream& out);
void write_sequence(const SequenceBatch& batch, const std::string& path);

/// Throws std::runtime_error on bad magic, truncation or an invalid header.
/// When `expected` is given, a header disagreeing with it is rejected. The
/// returned batch carries `max_range` from `expected` (or the GridSpec
/// default), since the file does not store it.
SequenceBatch read_sequence(std::istream& in, const std::optional<GridSpec>& expected = std::nullopt);
SequenceBatch read_sequence(const std::string& path, const std::optional<GridSpec>& expected = std::nullopt);

struct DatasetManifest {
  GridSpec grid;
  double frame_rate = 8.0;
  std::string provenance = "synthetic";  // or "imported"
  std::string scenario;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> files;  // relative to the manifest directory
  std::vector<int> frame_counts;

  void validate() const;
};

/// Writes `manifest.json` into `dir`.
void write_manifest(const DatasetManifest& manifest, const std::string& dir);
DatasetManifest read_manifest(const std::string& dir);

/// Writes every batch as seq_NNNN.dtseq plus the manifest.
void write_dataset(const std::string& dir, DatasetManifest manifest, const std::vector<SequenceBatch>& batches);
/// Loads every listed sequence, checking each against the manifest.
std::vector<SequenceBatch> read_dataset(const std::string& dir, DatasetManifest* manifest_out = nullptr);

struct ImportOptions {
  double frame_rate = 10.0;
  /// Largest scan/odometry timestamp gap accepted; default half a period.
  std::optional<double> tolerance;
};

/// Scan rows: `timestamp bearing range bearing range ...`; odometry rows:
/// `timestamp x y theta` (world frame). Fields may be separated by
/// whitespace or commas; '#' starts a comment. A range of inf, nan or '-'
/// is a beam without return. Each scan takes the nearest odometry pose.
SequenceBatch import_scans(std::istream& scans, std::istream& odometry, const GridSpec& spec,
                           const ImportOptions& opts = {});
SequenceBatch import_scans(const std::string& scan_path, const std::string& odom_path, const GridSpec& spec,
                           const ImportOptions& opts = {});

}  // namespace deeptrack

#endif  // DEEPTRACK_DATASET_HPP_
