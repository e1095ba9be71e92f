#include "binary_io.hpp"
#include "nvhcf/data.hpp"

namespace nvhcf::data {

namespace {

constexpr std::string_view kMagic{"NVHCFDS\0", 8};

struct Entry {
  std::uint32_t row;
  std::uint32_t col;
  double value;
};

struct PackedInteraction {
  std::uint32_t user;
  std::uint32_t item;
  std::int64_t timestamp;
};

void write_sparse(detail::BinaryWriter& w, const Matrix& m) {
  std::vector<Entry> entries;
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      if (m(r, c) != 0.0) entries.push_back({static_cast<std::uint32_t>(r), static_cast<std::uint32_t>(c), m(r, c)});
  w.u64(static_cast<std::uint64_t>(m.rows()));
  w.u64(static_cast<std::uint64_t>(m.cols()));
  w.vector(entries);
}

Matrix read_sparse(detail::BinaryReader& r) {
  const auto rows = static_cast<Eigen::Index>(r.u64());
  const auto cols = static_cast<Eigen::Index>(r.u64());
  Matrix m = Matrix::Zero(rows, cols);
  for (const Entry& e : r.vector<Entry>()) {
    if (e.row >= rows || e.col >= cols) throw IoError("dataset cache: feature entry out of range");
    m(e.row, e.col) = e.value;
  }
  return m;
}

void write_interactions(detail::BinaryWriter& w, const std::vector<Interaction>& list) {
  std::vector<PackedInteraction> packed;
  packed.reserve(list.size());
  for (const auto& p : list) packed.push_back({p.user, p.item, p.timestamp});
  w.vector(packed);
}

std::vector<Interaction> read_interactions(detail::BinaryReader& r) {
  std::vector<Interaction> out;
  for (const auto& p : r.vector<PackedInteraction>()) out.push_back({p.user, p.item, p.timestamp});
  return out;
}

void write_matrix(detail::BinaryWriter& w, const InteractionMatrix& m) {
  w.u64(m.users());
  w.u64(m.items());
  write_interactions(w, m.interactions());
}

InteractionMatrix read_matrix(detail::BinaryReader& r) {
  const auto users = r.u64();
  const auto items = r.u64();
  return InteractionMatrix(users, items, read_interactions(r));
}

void write_cases(detail::BinaryWriter& w, const std::vector<EvalCase>& cases) {
  w.u64(cases.size());
  for (const auto& c : cases) {
    w.u32(c.user);
    w.u32(c.held_out_item);
    w.pod<std::uint8_t>(c.short_negatives ? 1 : 0);
    w.vector(c.negatives);
  }
}

std::vector<EvalCase> read_cases(detail::BinaryReader& r) {
  const auto n = r.u64();
  std::vector<EvalCase> cases;
  for (std::uint64_t k = 0; k < n; ++k) {
    EvalCase c;
    c.user = r.u32();
    c.held_out_item = r.u32();
    c.short_negatives = r.pod<std::uint8_t>() != 0;
    c.negatives = r.vector<ItemId>();
    cases.push_back(std::move(c));
  }
  return cases;
}

void write_cold(detail::BinaryWriter& w, const ColdSplit& s) {
  w.u32(static_cast<std::uint32_t>(s.mode));
  w.f64(s.fraction);
  w.u64(s.seed);
  w.u64(s.base_users);
  w.u64(s.base_items);
  write_matrix(w, s.train);
  write_interactions(w, s.validation);
  write_interactions(w, s.test);
  write_cases(w, s.validation_cases);
  write_cases(w, s.test_cases);
  w.matrix(s.cold_features);
  w.vector(s.cold_source);
}

ColdSplit read_cold(detail::BinaryReader& r) {
  ColdSplit s;
  s.mode = static_cast<ColdMode>(r.u32());
  s.fraction = r.f64();
  s.seed = r.u64();
  s.base_users = r.u64();
  s.base_items = r.u64();
  s.train = read_matrix(r);
  s.validation = read_interactions(r);
  s.test = read_interactions(r);
  s.validation_cases = read_cases(r);
  s.test_cases = read_cases(r);
  s.cold_features = r.matrix();
  s.cold_source = r.vector<std::uint32_t>();
  return s;
}

}  // namespace

void save_dataset(const PreparedDataset& ds, const std::filesystem::path& path) {
  detail::BinaryWriter w(path);
  w.bytes(kMagic);
  w.u32(kDatasetCacheVersion);
  w.string(ds.name);
  w.u64(ds.seed);
  w.u64(ds.raw_ratings);
  write_matrix(w, ds.full);
  write_sparse(w, ds.side.user_features);
  write_sparse(w, ds.side.item_features);
  w.strings(ds.side.user_feature_names);
  w.strings(ds.side.item_feature_names);
  w.u64(ds.side.users_without_metadata);
  w.u64(ds.side.items_without_metadata);
  write_matrix(w, ds.train);
  write_cases(w, ds.validation);
  write_cases(w, ds.test);
  write_cold(w, ds.cold_user);
  write_cold(w, ds.cold_item);
  w.finish();
}

PreparedDataset load_dataset(const std::filesystem::path& path) {
  detail::BinaryReader r(path);
  r.expect(kMagic);
  if (const auto version = r.u32(); version != kDatasetCacheVersion)
    throw IoError(path.string() + ": dataset cache version " + std::to_string(version) + ", expected " +
                  std::to_string(kDatasetCacheVersion));
  PreparedDataset ds;
  ds.name = r.string();
  ds.seed = r.u64();
  ds.raw_ratings = r.u64();
  ds.full = read_matrix(r);
  ds.side.user_features = read_sparse(r);
  ds.side.item_features = read_sparse(r);
  ds.side.user_feature_names = r.strings();
  ds.side.item_feature_names = r.strings();
  ds.side.users_without_metadata = r.u64();
  ds.side.items_without_metadata = r.u64();
  ds.train = read_matrix(r);
  ds.validation = read_cases(r);
  ds.test = read_cases(r);
  ds.cold_user = read_cold(r);
  ds.cold_item = read_cold(r);
  if (!r.at_end()) throw IoError(path.string() + ": trailing bytes after dataset cache");
  return ds;
}

}  // namespace nvhcf::data
