#pragma once

// Dataset ingestion, feature vectorization, splits and sampling.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nvhcf/autodiff.hpp"
#include "nvhcf/rng.hpp"

namespace nvhcf::data {

using autodiff::Matrix;
using autodiff::Vector;

using UserId = std::uint32_t;
using ItemId = std::uint32_t;

struct Interaction {
  UserId user = 0;
  ItemId item = 0;
  std::int64_t timestamp = 0;

  friend bool operator==(const Interaction&, const Interaction&) = default;
};

// Binary implicit-feedback matrix R (users x items), stored both row-major
// (CSR, with timestamps) and column-major (CSC). Immutable once built.
class InteractionMatrix {
 public:
  InteractionMatrix() = default;
  // Duplicated (user, item) pairs keep the latest timestamp. Throws
  // DimensionError for ids outside [0, users) x [0, items).
  InteractionMatrix(std::size_t users, std::size_t items, std::vector<Interaction> positives);

  std::size_t users() const { return users_; }
  std::size_t items() const { return items_; }
  std::size_t nnz() const { return item_index_.size(); }

  std::span<const ItemId> items_of(UserId user) const;
  std::span<const std::int64_t> timestamps_of(UserId user) const;
  std::span<const UserId> users_of(ItemId item) const;
  bool contains(UserId user, ItemId item) const;

  // k-th positive in user-major order, k < nnz().
  Interaction positive(std::size_t k) const;
  std::vector<Interaction> interactions() const;

  // Dense binary views R_i. (length items()) and R_.j (length users()).
  Vector row(UserId user) const;
  Vector column(ItemId item) const;

  InteractionMatrix without(std::span<const Interaction> removed) const;
  // Same positives with a larger id space (new ids have empty rows/columns).
  InteractionMatrix resized(std::size_t users, std::size_t items) const;

  friend bool operator==(const InteractionMatrix&, const InteractionMatrix&) = default;

 private:
  std::size_t users_ = 0;
  std::size_t items_ = 0;
  std::vector<std::size_t> row_offsets_{0};
  std::vector<ItemId> item_index_;
  std::vector<std::int64_t> timestamps_;
  std::vector<std::size_t> col_offsets_{0};
  std::vector<UserId> user_index_;
};

struct RatingsFile {
  InteractionMatrix matrix;
  std::size_t raw_ratings = 0;
  // raw_user_ids[i] is the file's id for dense user i (same for items).
  std::vector<std::int64_t> raw_user_ids;
  std::vector<std::int64_t> raw_item_ids;
};

// MovieLens `u.data` (whitespace separated) or `ratings.dat` ("::" separated):
// user, item, rating, timestamp. R_ij = 1 iff rating >= threshold. Ids are
// remapped densely in ascending raw-id order; users and items that only have
// sub-threshold ratings keep their (empty) rows.
RatingsFile load_movielens(const std::filesystem::path& ratings_path, double threshold = 4.0);

// Lastfm `user_artists.dat`: userID, artistID, weight with a header line.
// Every listened pair is positive; the file carries no timestamps.
RatingsFile load_lastfm(const std::filesystem::path& user_artists_path);

// Side information. Rows are entities: user_features.row(i) is f_i and
// item_features.row(j) is g_j.
struct SideInfo {
  Matrix user_features;  // M x P
  Matrix item_features;  // N x Q
  std::vector<std::string> user_feature_names;
  std::vector<std::string> item_feature_names;
  std::size_t users_without_metadata = 0;
  std::size_t items_without_metadata = 0;

  Eigen::Index user_dim() const { return user_features.cols(); }
  Eigen::Index item_dim() const { return item_features.cols(); }
};

// Lowercase alphanumeric tokens, stopwords and pure numbers removed.
std::vector<std::string> tokenize(std::string_view text);

struct BagOfWords {
  std::vector<std::string> vocabulary;
  Matrix rows;  // documents x vocabulary, L2-normalised (empty documents stay zero)
};

// Keeps the `max_terms` terms with highest document frequency (ties broken
// alphabetically) among those appearing in at least `min_df` documents.
BagOfWords bag_of_words(const std::vector<std::vector<std::string>>& documents, std::size_t max_terms = 8000,
                        std::size_t min_df = 1);

// Age buckets 1-17, 18-24, 25-34, 35-44, 45-49, 50-55, 56+.
std::size_t age_bucket(int age);
// First digit of a zip code, or -1 when it does not start with a digit.
int zip_bucket(std::string_view zip);

struct Demographics {
  std::string gender;  // "M" or "F"
  int age = 0;
  std::string occupation;
  std::string zip;
};

// One-hot gender (M, F), age bucket (7), occupation (vocabulary given),
// zip first digit (10). Missing entries leave their block zero.
Matrix encode_demographics(const std::vector<std::optional<Demographics>>& users,
                           const std::vector<std::string>& occupations, std::vector<std::string>* names = nullptr);

struct SideInfoOptions {
  std::size_t max_terms = 8000;
  std::size_t min_df = 2;
};

// ML-100K: users from u.user (demographics); items from u.item (19 genre
// flags followed by a bag of words over the title).
SideInfo ml100k_side_info(const std::filesystem::path& dir, const RatingsFile& ratings,
                          const SideInfoOptions& options = {});
// ML-1M: users.dat demographics; movies.dat genres + title bag of words.
SideInfo ml1m_side_info(const std::filesystem::path& dir, const RatingsFile& ratings,
                        const SideInfoOptions& options = {});
// Lastfm-2K: users from the user_friends.dat adjacency row; items from the
// bag of tags in user_taggedartists.dat.
SideInfo lastfm_side_info(const std::filesystem::path& dir, const RatingsFile& ratings,
                          const SideInfoOptions& options = {});

struct TrainingPair {
  UserId user = 0;
  ItemId item = 0;
  std::uint8_t label = 0;

  friend bool operator==(const TrainingPair&, const TrainingPair&) = default;
};

// Uniform negative (user, item) pair from the unobserved entries of `train`.
Interaction sample_negative(const InteractionMatrix& train, Rng& rng);

// The given positives followed by neg_ratio * |positives| fresh negatives.
std::vector<TrainingPair> with_negatives(const InteractionMatrix& train, std::span<const Interaction> positives,
                                         std::size_t neg_ratio, Rng& rng);

// E_p uniform positives (without replacement unless E_p exceeds the positive
// count) and E_n = neg_ratio * E_p uniform negatives.
std::vector<TrainingPair> sample_minibatch(const InteractionMatrix& train, std::size_t batch_positives,
                                           std::size_t neg_ratio, Rng& rng);

inline constexpr std::size_t kEvalNegatives = 99;

struct EvalCase {
  UserId user = 0;
  ItemId held_out_item = 0;
  std::vector<ItemId> negatives;
  // Fewer than 99 non-interacted items were available.
  bool short_negatives = false;

  friend bool operator==(const EvalCase&, const EvalCase&) = default;
};

struct LeaveOneOut {
  InteractionMatrix train;
  std::vector<EvalCase> cases;
};

// For every user with at least two positives, the latest positive (ties: the
// larger item id) moves out of training into an EvalCase with 99 negatives
// drawn without replacement from items the user never interacted with in
// `exclusion` (defaults to `r`).
LeaveOneOut leave_one_out_split(const InteractionMatrix& r, std::uint64_t seed,
                                const InteractionMatrix* exclusion = nullptr,
                                std::size_t negatives = kEvalNegatives);

enum class ColdMode { None, User, Item };

std::string_view to_string(ColdMode mode);
ColdMode parse_cold_mode(std::string_view text);

// Random 80/10/10 split of the positives; in User (Item) mode a fraction of
// the validation and test samples is re-assigned to fresh user (item) ids
// whose side information is copied from the source entity and which have no
// training history. Fresh ids start at base_users (base_items).
struct ColdSplit {
  ColdMode mode = ColdMode::None;
  double fraction = 0.0;
  std::uint64_t seed = 0;
  std::size_t base_users = 0;
  std::size_t base_items = 0;
  InteractionMatrix train;
  std::vector<Interaction> validation;
  std::vector<Interaction> test;
  std::vector<EvalCase> validation_cases;
  std::vector<EvalCase> test_cases;
  // Row k holds the side information of fresh id base + k.
  Matrix cold_features;
  std::vector<std::uint32_t> cold_source;

  std::size_t cold_count() const { return cold_source.size(); }
  bool is_cold_user(UserId u) const { return mode == ColdMode::User && u >= base_users; }
  bool is_cold_item(ItemId j) const { return mode == ColdMode::Item && j >= base_items; }
};

// Plain 80/10/10 split (mode None) with one EvalCase per validation/test sample.
ColdSplit split_train_val_test(const InteractionMatrix& r, std::uint64_t seed, double train_fraction = 0.8,
                               double validation_fraction = 0.1);
// Converts round(fraction * |validation|) and round(fraction * |test|) samples
// of `base` to cold ids. Throws ContractError for fraction outside (0, 1) or
// when no sample becomes cold.
ColdSplit make_cold_split(const ColdSplit& base, const InteractionMatrix& full, const SideInfo& side, double fraction,
                          ColdMode mode, std::uint64_t seed);
ColdSplit make_cold_split(const InteractionMatrix& r, const SideInfo& side, double fraction, ColdMode mode,
                          std::uint64_t seed);

// Everything a training/evaluation run needs, cached on disk by `prepare`.
struct PreparedDataset {
  std::string name;
  std::uint64_t seed = 0;
  std::size_t raw_ratings = 0;
  InteractionMatrix full;
  SideInfo side;
  // Leave-one-out: latest positive is the test case, second latest the
  // validation case; both are removed from `train`.
  InteractionMatrix train;
  std::vector<EvalCase> validation;
  std::vector<EvalCase> test;
  ColdSplit cold_user;
  ColdSplit cold_item;
};

struct PrepareOptions {
  std::uint64_t seed = 42;
  double cold_fraction = 0.3;
};

PreparedDataset prepare_dataset(std::string name, const RatingsFile& ratings, SideInfo side,
                                const PrepareOptions& options = {});

inline constexpr std::uint32_t kDatasetCacheVersion = 1;

void save_dataset(const PreparedDataset& dataset, const std::filesystem::path& path);
PreparedDataset load_dataset(const std::filesystem::path& path);

}  // namespace nvhcf::data
