#include <algorithm>
#include <numeric>
#include <random>

#include "mufasa/data.hpp"
#include "mufasa/error.hpp"

namespace mufasa {

namespace {

std::vector<bool> choose_holdout(std::size_t users, std::size_t count, std::uint64_t seed) {
  std::vector<std::size_t> order(users);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed ^ 0x5eed5a1177ULL);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<bool> holdout(users, false);
  for (std::size_t i = 0; i < std::min(count, users); ++i) holdout[order[i]] = true;
  return holdout;
}

void add_leave_one_out(const UserRecord& user, std::size_t index, Split& out) {
  if (user.items.size() < 2) {
    ++out.skipped;
    return;
  }
  std::vector<std::size_t> prefix(user.items.begin(), user.items.end() - 1);
  out.test.push_back({index, prefix, {user.items.back()}});
  out.train.push_back({index, std::move(prefix)});
}

void add_zero_shot(const UserRecord& user, std::size_t index, std::size_t targets, Split& out) {
  if (user.items.size() < targets + 1) {
    ++out.skipped;
    return;
  }
  const auto cut = user.items.end() - static_cast<std::ptrdiff_t>(targets);
  out.test.push_back({index, std::vector<std::size_t>(user.items.begin(), cut),
                      std::vector<std::size_t>(cut, user.items.end())});
}

}  // namespace

Split split(std::span<const UserRecord> users, const SplitSpec& spec) {
  Split out;
  if (spec.mode == SplitMode::kLeaveOneOut) {
    for (std::size_t u = 0; u < users.size(); ++u) add_leave_one_out(users[u], u, out);
    return out;
  }
  if (spec.targets_per_user < 1) fail(ErrorCode::kConfig, "zero-shot split needs targets_per_user >= 1");
  const auto holdout = choose_holdout(users.size(), spec.holdout_users, spec.seed);
  for (std::size_t u = 0; u < users.size(); ++u) {
    if (holdout[u]) {
      add_zero_shot(users[u], u, spec.targets_per_user, out);
    } else {
      out.train.push_back({u, users[u].items});
    }
  }
  return out;
}

ProtocolSplits protocol_splits(std::span<const UserRecord> users, std::size_t holdout_users,
                               std::size_t targets_per_user, std::uint64_t seed) {
  ProtocolSplits out;
  out.zero_shot = split(users, {SplitMode::kZeroShot, holdout_users, targets_per_user, seed});
  for (const TrainSequence& seq : out.zero_shot.train)
    add_leave_one_out(users[seq.user], seq.user, out.leave_one_out);
  return out;
}

}  // namespace mufasa
