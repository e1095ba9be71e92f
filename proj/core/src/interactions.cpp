#include <algorithm>
#include <limits>
#include <charconv>
#include <fstream>
#include <map>
#include <string>

#include "nvhcf/data.hpp"
#include "nvhcf/errors.hpp"
#include "text_util.hpp"

namespace nvhcf::data {

InteractionMatrix::InteractionMatrix(std::size_t users, std::size_t items, std::vector<Interaction> positives)
    : users_(users), items_(items) {
  for (const Interaction& p : positives) {
    if (p.user >= users || p.item >= items)
      throw DimensionError("interaction (" + std::to_string(p.user) + ", " + std::to_string(p.item) +
                           ") outside " + std::to_string(users) + "x" + std::to_string(items));
  }
  std::sort(positives.begin(), positives.end(), [](const Interaction& a, const Interaction& b) {
    if (a.user != b.user) return a.user < b.user;
    if (a.item != b.item) return a.item < b.item;
    return a.timestamp > b.timestamp;
  });
  positives.erase(std::unique(positives.begin(), positives.end(),
                              [](const Interaction& a, const Interaction& b) {
                                return a.user == b.user && a.item == b.item;
                              }),
                  positives.end());

  row_offsets_.assign(users + 1, 0);
  item_index_.reserve(positives.size());
  timestamps_.reserve(positives.size());
  for (const Interaction& p : positives) {
    ++row_offsets_[p.user + 1];
    item_index_.push_back(p.item);
    timestamps_.push_back(p.timestamp);
  }
  for (std::size_t u = 0; u < users; ++u) row_offsets_[u + 1] += row_offsets_[u];

  col_offsets_.assign(items + 1, 0);
  for (const Interaction& p : positives) ++col_offsets_[p.item + 1];
  for (std::size_t j = 0; j < items; ++j) col_offsets_[j + 1] += col_offsets_[j];
  user_index_.resize(positives.size());
  std::vector<std::size_t> fill(col_offsets_.begin(), col_offsets_.end() - 1);
  // positives are user-sorted, so each column comes out sorted as well
  for (const Interaction& p : positives) user_index_[fill[p.item]++] = p.user;
}

std::span<const ItemId> InteractionMatrix::items_of(UserId user) const {
  return {item_index_.data() + row_offsets_[user], row_offsets_[user + 1] - row_offsets_[user]};
}

std::span<const std::int64_t> InteractionMatrix::timestamps_of(UserId user) const {
  return {timestamps_.data() + row_offsets_[user], row_offsets_[user + 1] - row_offsets_[user]};
}

std::span<const UserId> InteractionMatrix::users_of(ItemId item) const {
  return {user_index_.data() + col_offsets_[item], col_offsets_[item + 1] - col_offsets_[item]};
}

bool InteractionMatrix::contains(UserId user, ItemId item) const {
  if (user >= users_) return false;
  auto row = items_of(user);
  return std::binary_search(row.begin(), row.end(), item);
}

Interaction InteractionMatrix::positive(std::size_t k) const {
  auto it = std::upper_bound(row_offsets_.begin(), row_offsets_.end(), k);
  const auto user = static_cast<UserId>(std::distance(row_offsets_.begin(), it) - 1);
  return {user, item_index_[k], timestamps_[k]};
}

std::vector<Interaction> InteractionMatrix::interactions() const {
  std::vector<Interaction> out;
  out.reserve(nnz());
  for (std::size_t u = 0; u < users_; ++u)
    for (std::size_t k = row_offsets_[u]; k < row_offsets_[u + 1]; ++k)
      out.push_back({static_cast<UserId>(u), item_index_[k], timestamps_[k]});
  return out;
}

Vector InteractionMatrix::row(UserId user) const {
  Vector v = Vector::Zero(static_cast<Eigen::Index>(items_));
  if (user < users_)
    for (ItemId j : items_of(user)) v[j] = 1.0;
  return v;
}

Vector InteractionMatrix::column(ItemId item) const {
  Vector v = Vector::Zero(static_cast<Eigen::Index>(users_));
  if (item < items_)
    for (UserId u : users_of(item)) v[u] = 1.0;
  return v;
}

InteractionMatrix InteractionMatrix::without(std::span<const Interaction> removed) const {
  std::vector<std::pair<UserId, ItemId>> drop;
  drop.reserve(removed.size());
  for (const auto& r : removed) drop.emplace_back(r.user, r.item);
  std::sort(drop.begin(), drop.end());
  std::vector<Interaction> kept;
  kept.reserve(nnz());
  for (const Interaction& p : interactions())
    if (!std::binary_search(drop.begin(), drop.end(), std::make_pair(p.user, p.item))) kept.push_back(p);
  return InteractionMatrix(users_, items_, std::move(kept));
}

InteractionMatrix InteractionMatrix::resized(std::size_t users, std::size_t items) const {
  return InteractionMatrix(users, items, interactions());
}

namespace {

struct RawRow {
  std::int64_t user;
  std::int64_t item;
  double value;
  std::int64_t timestamp;
};

RatingsFile assemble(std::vector<RawRow> rows, double threshold) {
  std::map<std::int64_t, UserId> users;
  std::map<std::int64_t, ItemId> items;
  for (const RawRow& r : rows) {
    users.emplace(r.user, 0);
    items.emplace(r.item, 0);
  }
  RatingsFile out;
  out.raw_ratings = rows.size();
  for (auto& [raw, dense] : users) {
    dense = static_cast<UserId>(out.raw_user_ids.size());
    out.raw_user_ids.push_back(raw);
  }
  for (auto& [raw, dense] : items) {
    dense = static_cast<ItemId>(out.raw_item_ids.size());
    out.raw_item_ids.push_back(raw);
  }
  std::vector<Interaction> positives;
  for (const RawRow& r : rows)
    if (r.value >= threshold) positives.push_back({users[r.user], items[r.item], r.timestamp});
  out.matrix = InteractionMatrix(users.size(), items.size(), std::move(positives));
  return out;
}

}  // namespace

RatingsFile load_movielens(const std::filesystem::path& ratings_path, double threshold) {
  std::ifstream in(ratings_path);
  if (!in) throw IoError("cannot open ratings file " + ratings_path.string());
  std::vector<RawRow> rows;
  std::string line;
  std::size_t line_no = 0;
  const std::string file = ratings_path.string();
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto fields = line.find("::") != std::string::npos ? detail::split(line, "::") : detail::split_ws(line);
    if (fields.size() < 3) throw ParseError(file, line_no, "expected user, item, rating[, timestamp]");
    RawRow r{};
    if (!detail::parse_int(fields[0], r.user) || !detail::parse_int(fields[1], r.item) ||
        !detail::parse_double(fields[2], r.value))
      throw ParseError(file, line_no, "non-numeric field in '" + line + "'");
    if (fields.size() >= 4 && !detail::parse_int(fields[3], r.timestamp))
      throw ParseError(file, line_no, "bad timestamp in '" + line + "'");
    rows.push_back(r);
  }
  if (rows.empty()) throw ParseError(file, line_no, "no ratings found");
  return assemble(std::move(rows), threshold);
}

RatingsFile load_lastfm(const std::filesystem::path& user_artists_path) {
  std::ifstream in(user_artists_path);
  if (!in) throw IoError("cannot open " + user_artists_path.string());
  std::vector<RawRow> rows;
  std::string line;
  std::size_t line_no = 0;
  const std::string file = user_artists_path.string();
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split_ws(line);
    if (line_no == 1 && !fields.empty() && !fields[0].empty() && !std::isdigit(static_cast<unsigned char>(fields[0][0])))
      continue;  // header
    if (fields.size() < 2) throw ParseError(file, line_no, "expected userID, artistID[, weight]");
    RawRow r{};
    r.value = 1.0;
    if (!detail::parse_int(fields[0], r.user) || !detail::parse_int(fields[1], r.item))
      throw ParseError(file, line_no, "non-numeric id in '" + line + "'");
    if (fields.size() >= 3 && !detail::parse_double(fields[2], r.value))
      throw ParseError(file, line_no, "bad weight in '" + line + "'");
    rows.push_back(r);
  }
  if (rows.empty()) throw ParseError(file, line_no, "no listening records found");
  // weight > 0 means listened
  return assemble(std::move(rows), std::numeric_limits<double>::min());
}

}  // namespace nvhcf::data
