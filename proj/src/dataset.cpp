// SPDX-License-Identifier: Apache-2.0

#include "deeptrack/dataset.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace deeptrack {

namespace {

constexpr char kMagic[6] = {'D', 'T', 'S', 'E', 'Q', '1'};
constexpr std::uint32_t kFlagTruth = 1u;

template <typename U>
void put_le(std::ostream& out, U v) {
  char buf[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(buf, sizeof(U));
}

void read_exact(std::istream& in, void* data, std::size_t n) {
  in.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) throw std::runtime_error("read_sequence: truncated file");
}

template <typename U>
U get_le(std::istream& in) {
  unsigned char buf[sizeof(U)];
  read_exact(in, buf, sizeof(U));
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
  return v;
}

std::uint32_t cell_size_mm(double cell_size) {
  const double mm = cell_size * 1000.0;
  const double rounded = std::round(mm);
  if (!(rounded >= 1.0) || std::abs(mm - rounded) > 1e-9 * std::max(1.0, mm) ||
      rounded > std::numeric_limits<std::uint32_t>::max()) {
    throw std::invalid_argument("write_sequence: cell size must be a whole number of millimetres");
  }
  return static_cast<std::uint32_t>(rounded);
}

void write_plane(std::ostream& out, const BinaryGrid& g) {
  const std::vector<std::uint8_t> bytes = pack_plane(g);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

BinaryGrid read_plane(std::istream& in, int m) {
  std::vector<std::uint8_t> bytes(packed_plane_bytes(m));
  read_exact(in, bytes.data(), bytes.size());
  return unpack_plane(bytes, m);
}

}  // namespace

std::size_t packed_plane_bytes(int size_cells) {
  const std::size_t cells = static_cast<std::size_t>(size_cells) * static_cast<std::size_t>(size_cells);
  return (cells + 7) / 8;
}

std::vector<std::uint8_t> pack_plane(const BinaryGrid& grid) {
  const auto cells = grid.cells();
  std::vector<std::uint8_t> out(packed_plane_bytes(grid.size()), 0);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (cells[i]) out[i / 8] |= static_cast<std::uint8_t>(0x80u >> (i % 8));
  }
  return out;
}

BinaryGrid unpack_plane(const std::vector<std::uint8_t>& bytes, int size_cells) {
  if (bytes.size() != packed_plane_bytes(size_cells)) throw std::invalid_argument("unpack_plane: wrong byte count");
  BinaryGrid g(size_cells);
  auto cells = g.cells();
  for (std::size_t i = 0; i < cells.size(); ++i) cells[i] = (bytes[i / 8] >> (7 - i % 8)) & 1u;
  return g;
}

void write_sequence(const SequenceBatch& batch, std::ostream& out) {
  batch.grid.validate();
  const int m = batch.grid.size_cells;
  const std::size_t frames = batch.observations.size();
  if (batch.rel_transforms.size() != frames) {
    throw std::invalid_argument("write_sequence: need one egomotion transform per frame");
  }
  if (batch.truth_occ && batch.truth_occ->size() != frames) {
    throw std::invalid_argument("write_sequence: truth length does not match the observations");
  }
  const auto check = [m](const BinaryGrid& g) {
    if (g.size() != m) throw std::invalid_argument("write_sequence: grid size does not match the GridSpec");
  };
  out.write(kMagic, sizeof(kMagic));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(m));
  put_le<std::uint32_t>(out, cell_size_mm(batch.grid.cell_size));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(frames));
  put_le<std::uint32_t>(out, batch.truth_occ ? kFlagTruth : 0u);
  for (std::size_t k = 0; k < frames; ++k) {
    check(batch.observations[k].vis);
    check(batch.observations[k].occ);
    write_plane(out, batch.observations[k].vis);
    write_plane(out, batch.observations[k].occ);
    const Pose2& t = batch.rel_transforms[k];
    put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(t.x()));
    put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(t.y()));
    put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(t.theta()));
    if (batch.truth_occ) {
      check((*batch.truth_occ)[k]);
      write_plane(out, (*batch.truth_occ)[k]);
    }
  }
  if (!out) throw std::runtime_error("write_sequence: write failed");
}

void write_sequence(const SequenceBatch& batch, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("write_sequence: cannot open " + path);
  write_sequence(batch, out);
}

SequenceBatch read_sequence(std::istream& in, const std::optional<GridSpec>& expected) {
  char magic[sizeof(kMagic)];
  read_exact(in, magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw std::runtime_error("read_sequence: bad magic");
  const auto m = get_le<std::uint32_t>(in);
  const auto mm = get_le<std::uint32_t>(in);
  const auto frames = get_le<std::uint32_t>(in);
  const auto flags = get_le<std::uint32_t>(in);
  if (m == 0 || m % 2 == 0 || m > 100000) throw std::runtime_error("read_sequence: grid size must be odd");
  if (mm == 0) throw std::runtime_error("read_sequence: zero cell size");
  if ((flags & ~kFlagTruth) != 0) throw std::runtime_error("read_sequence: unknown flags");

  SequenceBatch batch;
  if (expected) {
    if (expected->size_cells != static_cast<int>(m) || cell_size_mm(expected->cell_size) != mm) {
      throw std::runtime_error("read_sequence: grid does not match the expected specification");
    }
    batch.grid = *expected;
  } else {
    batch.grid.size_cells = static_cast<int>(m);
    batch.grid.cell_size = mm / 1000.0;
  }
  const bool truth = (flags & kFlagTruth) != 0;
  if (truth) batch.truth_occ.emplace();
  for (std::uint32_t k = 0; k < frames; ++k) {
    ObservationGrid obs;
    obs.vis = read_plane(in, static_cast<int>(m));
    obs.occ = read_plane(in, static_cast<int>(m));
    batch.observations.push_back(std::move(obs));
    const double x = std::bit_cast<double>(get_le<std::uint64_t>(in));
    const double y = std::bit_cast<double>(get_le<std::uint64_t>(in));
    const double theta = std::bit_cast<double>(get_le<std::uint64_t>(in));
    batch.rel_transforms.emplace_back(x, y, theta);
    if (truth) batch.truth_occ->push_back(read_plane(in, static_cast<int>(m)));
  }
  return batch;
}

SequenceBatch read_sequence(const std::string& path, const std::optional<GridSpec>& expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_sequence: cannot open " + path);
  return read_sequence(in, expected);
}

// --- manifests ---------------------------------------------------------------

void DatasetManifest::validate() const {
  grid.validate();
  if (!(frame_rate > 0.0)) throw std::invalid_argument("manifest: frame rate must be positive");
  if (provenance != "synthetic" && provenance != "imported") {
    throw std::invalid_argument("manifest: provenance must be synthetic or imported");
  }
  if (files.size() != frame_counts.size()) throw std::invalid_argument("manifest: one frame count per file");
}

void write_manifest(const DatasetManifest& manifest, const std::string& dir) {
  manifest.validate();
  nlohmann::ordered_json j;
  j["format"] = "DTSEQ1";
  j["grid"] = {{"size_cells", manifest.grid.size_cells},
               {"cell_size", manifest.grid.cell_size},
               {"max_range", manifest.grid.max_range}};
  j["frame_rate"] = manifest.frame_rate;
  j["provenance"] = manifest.provenance;
  j["scenario"] = manifest.scenario;
  if (manifest.seed) {
    j["seed"] = *manifest.seed;
  } else {
    j["seed"] = nullptr;
  }
  j["sequence_count"] = manifest.files.size();
  nlohmann::ordered_json seqs = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < manifest.files.size(); ++i) {
    seqs.push_back({{"file", manifest.files[i]}, {"frames", manifest.frame_counts[i]}});
  }
  j["sequences"] = seqs;
  std::ofstream out(std::filesystem::path(dir) / "manifest.json", std::ios::trunc);
  if (!out) throw std::runtime_error("write_manifest: cannot write into " + dir);
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("write_manifest: write failed");
}

DatasetManifest read_manifest(const std::string& dir) {
  const std::filesystem::path path = std::filesystem::path(dir) / "manifest.json";
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_manifest: cannot open " + path.string());
  DatasetManifest m;
  try {
    const nlohmann::json j = nlohmann::json::parse(in);
    m.grid.size_cells = j.at("grid").at("size_cells").get<int>();
    m.grid.cell_size = j.at("grid").at("cell_size").get<double>();
    m.grid.max_range = j.at("grid").at("max_range").get<double>();
    m.frame_rate = j.at("frame_rate").get<double>();
    m.provenance = j.at("provenance").get<std::string>();
    m.scenario = j.value("scenario", "");
    if (j.contains("seed") && !j["seed"].is_null()) m.seed = j["seed"].get<std::uint64_t>();
    for (const auto& s : j.at("sequences")) {
      m.files.push_back(s.at("file").get<std::string>());
      m.frame_counts.push_back(s.at("frames").get<int>());
    }
    if (j.at("sequence_count").get<std::size_t>() != m.files.size()) {
      throw std::runtime_error("sequence_count disagrees with the sequence list");
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("read_manifest: ") + e.what());
  }
  try {
    m.validate();
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(std::string("read_manifest: ") + e.what());
  }
  return m;
}

void write_dataset(const std::string& dir, DatasetManifest manifest, const std::vector<SequenceBatch>& batches) {
  std::filesystem::create_directories(dir);
  manifest.files.clear();
  manifest.frame_counts.clear();
  for (std::size_t i = 0; i < batches.size(); ++i) {
    if (!(batches[i].grid == manifest.grid)) throw std::invalid_argument("write_dataset: batch grid differs");
    std::ostringstream name;
    name << "seq_" << std::setw(4) << std::setfill('0') << i << ".dtseq";
    write_sequence(batches[i], (std::filesystem::path(dir) / name.str()).string());
    manifest.files.push_back(name.str());
    manifest.frame_counts.push_back(batches[i].frame_count());
  }
  write_manifest(manifest, dir);
}

std::vector<SequenceBatch> read_dataset(const std::string& dir, DatasetManifest* manifest_out) {
  const DatasetManifest manifest = read_manifest(dir);
  std::vector<SequenceBatch> out;
  for (std::size_t i = 0; i < manifest.files.size(); ++i) {
    const std::filesystem::path p = std::filesystem::path(dir) / manifest.files[i];
    SequenceBatch b = read_sequence(p.string(), manifest.grid);
    if (b.frame_count() != manifest.frame_counts[i]) {
      throw std::runtime_error("read_dataset: " + manifest.files[i] + " frame count disagrees with the manifest");
    }
    out.push_back(std::move(b));
  }
  if (manifest_out != nullptr) *manifest_out = manifest;
  return out;
}

// --- import ----------------------------------------------------------------------

namespace {

struct Row {
  int line = 0;
  std::vector<std::string> fields;
};

std::vector<Row> read_rows(std::istream& in) {
  std::vector<Row> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ss(line);
    Row row{lineno, {}};
    std::string f;
    while (ss >> f) row.fields.push_back(f);
    if (!row.fields.empty()) rows.push_back(std::move(row));
  }
  return rows;
}

double parse_number(const std::string& s, int line, const char* what) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || !std::isfinite(v)) {
    throw std::runtime_error("import_scans: line " + std::to_string(line) + ": malformed " + what + " '" + s + "'");
  }
  return v;
}

std::optional<double> parse_range(const std::string& s, int line) {
  std::string lower(s);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "-" || lower == "inf" || lower == "+inf" || lower == "nan") return std::nullopt;
  return parse_number(s, line, "range");
}

}  // namespace

SequenceBatch import_scans(std::istream& scans, std::istream& odometry, const GridSpec& spec,
                           const ImportOptions& opts) {
  spec.validate();
  if (!(opts.frame_rate > 0.0)) throw std::invalid_argument("import_scans: frame rate must be positive");
  const double tolerance = opts.tolerance.value_or(0.5 / opts.frame_rate);

  struct Odom {
    double t;
    Pose2 pose;
  };
  std::vector<Odom> odom;
  for (const Row& r : read_rows(odometry)) {
    if (r.fields.size() != 4) {
      throw std::runtime_error("import_scans: odometry line " + std::to_string(r.line) + ": expected t x y theta");
    }
    const double t = parse_number(r.fields[0], r.line, "timestamp");
    if (!odom.empty() && t <= odom.back().t) {
      throw std::runtime_error("import_scans: odometry timestamps must increase (line " + std::to_string(r.line) + ")");
    }
    odom.push_back({t, Pose2(parse_number(r.fields[1], r.line, "x"), parse_number(r.fields[2], r.line, "y"),
                             parse_number(r.fields[3], r.line, "theta"))});
  }

  SequenceBatch batch;
  batch.grid = spec;
  std::optional<double> last_t;
  std::optional<Pose2> last_pose;
  for (const Row& r : read_rows(scans)) {
    if (r.fields.size() % 2 != 1) {
      throw std::runtime_error("import_scans: scan line " + std::to_string(r.line) +
                               ": expected a timestamp and bearing/range pairs");
    }
    const double t = parse_number(r.fields[0], r.line, "timestamp");
    if (last_t && t <= *last_t) {
      throw std::runtime_error("import_scans: scan timestamps must increase (line " + std::to_string(r.line) + ")");
    }
    last_t = t;
    std::vector<RangeReading> rays;
    for (std::size_t i = 1; i < r.fields.size(); i += 2) {
      const double bearing = parse_number(r.fields[i], r.line, "bearing");
      const std::optional<double> range = parse_range(r.fields[i + 1], r.line);
      if (range && *range < 0.0) {
        throw std::runtime_error("import_scans: line " + std::to_string(r.line) + ": negative range");
      }
      rays.push_back({bearing, range});
    }

    const auto it = std::lower_bound(odom.begin(), odom.end(), t, [](const Odom& o, double v) { return o.t < v; });
    const Odom* best = nullptr;
    if (it != odom.end()) best = &*it;
    if (it != odom.begin() && (best == nullptr || t - std::prev(it)->t <= best->t - t)) best = &*std::prev(it);
    if (best == nullptr || std::abs(best->t - t) > tolerance) {
      throw std::runtime_error("import_scans: no odometry within tolerance of scan at line " +
                               std::to_string(r.line));
    }

    batch.observations.push_back(encode_observation(rays, spec));
    // An unchanged pose is an exact identity rather than a roundoff residue.
    batch.rel_transforms.push_back(last_pose && !(*last_pose == best->pose) ? se2_relative(*last_pose, best->pose)
                                                                            : Pose2::identity());
    last_pose = best->pose;
  }
  return batch;
}

SequenceBatch import_scans(const std::string& scan_path, const std::string& odom_path, const GridSpec& spec,
                           const ImportOptions& opts) {
  std::ifstream scans(scan_path);
  if (!scans) throw std::runtime_error("import_scans: cannot open " + scan_path);
  std::ifstream odom(odom_path);
  if (!odom) throw std::runtime_error("import_scans: cannot open " + odom_path);
  return import_scans(scans, odom, spec, opts);
}

}  // namespace deeptrack
