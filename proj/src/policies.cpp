#include "aquarius/policies.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace aquarius {

namespace {

constexpr std::uint64_t kOffsetSeed = 0xA0761D6478BD642FULL;
constexpr std::uint64_t kSkipSeed = 0xE7037ED1A0B428DBULL;

std::uint64_t fmix64(std::uint64_t k) {
    k ^= k >> 33;
    k *= 0xff51afd7ed558ccdULL;
    k ^= k >> 33;
    k *= 0xc4ceb9fe1a85ec53ULL;
    k ^= k >> 33;
    return k;
}

std::uint64_t hash_dip(Dip dip, std::uint64_t seed) {
    const std::array<std::uint8_t, 4> b = {static_cast<std::uint8_t>(dip), static_cast<std::uint8_t>(dip >> 8),
                                           static_cast<std::uint8_t>(dip >> 16), static_cast<std::uint8_t>(dip >> 24)};
    return hash_bytes(b, seed);
}

}  // namespace

std::uint64_t hash_bytes(std::span<const std::uint8_t> data, std::uint64_t seed) {
    std::uint64_t h = 0xcbf29ce484222325ULL ^ seed;
    for (auto b : data) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    return fmix64(h);
}

std::uint64_t hash_tuple(const FiveTuple& tuple) {
    const auto b = tuple.bytes();
    return hash_bytes(b, kTupleHashSeed);
}

std::optional<Dip> ecmp_pick(const FiveTuple& tuple, std::span<const Dip> active) {
    if (active.empty()) return std::nullopt;
    return active[hash_tuple(tuple) % active.size()];
}

std::optional<Dip> ecmp_pick(const FiveTuple& tuple, const VipStore& store) {
    const std::size_t n = store.active_count();
    if (n == 0) return std::nullopt;
    return store.nth_active(hash_tuple(tuple) % n);
}

bool is_prime(std::uint32_t n) {
    if (n < 2) return false;
    for (std::uint32_t d = 2; static_cast<std::uint64_t>(d) * d <= n; ++d) {
        if (n % d == 0) return false;
    }
    return true;
}

MaglevTable MaglevTable::build(std::span<const Dip> backends, std::uint32_t table_size) {
    std::vector<std::uint32_t> ones(backends.size(), 1);
    return build(backends, ones, table_size);
}

MaglevTable MaglevTable::build(std::span<const Dip> backends, std::span<const std::uint32_t> weights,
                               std::uint32_t table_size) {
    if (backends.empty()) throw std::invalid_argument("maglev table needs at least one backend");
    if (weights.size() != backends.size()) throw std::invalid_argument("one weight per backend required");
    if (std::any_of(weights.begin(), weights.end(), [](auto w) { return w == 0; }))
        throw std::invalid_argument("maglev weights must be positive");
    if (!is_prime(table_size)) throw std::invalid_argument("maglev table size must be prime");

    const std::uint64_t m = table_size;
    const std::size_t n = backends.size();
    std::vector<std::uint64_t> offset(n), skip(n), next(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        offset[i] = hash_dip(backends[i], kOffsetSeed) % m;
        skip[i] = hash_dip(backends[i], kSkipSeed) % (m - 1) + 1;
    }

    constexpr std::uint32_t kEmpty = ~0u;
    std::vector<std::uint32_t> owner(m, kEmpty);
    std::uint64_t filled = 0;
    while (filled < m) {
        for (std::size_t i = 0; i < n && filled < m; ++i) {
            for (std::uint32_t r = 0; r < weights[i] && filled < m; ++r) {
                std::uint64_t c = (offset[i] + next[i] * skip[i]) % m;
                while (owner[c] != kEmpty) {
                    ++next[i];
                    c = (offset[i] + next[i] * skip[i]) % m;
                }
                owner[c] = static_cast<std::uint32_t>(i);
                ++next[i];
                ++filled;
            }
        }
    }

    MaglevTable t;
    t.backends_.assign(backends.begin(), backends.end());
    t.entries_.resize(m);
    for (std::size_t j = 0; j < m; ++j) t.entries_[j] = backends[owner[j]];
    return t;
}

std::vector<std::uint32_t> MaglevTable::entry_counts(std::uint32_t max_dip) const {
    std::vector<std::uint32_t> counts(max_dip + 1, 0);
    for (Dip d : entries_) {
        if (d <= max_dip) ++counts[d];
    }
    return counts;
}

std::string_view to_string(PolicyKind kind) {
    switch (kind) {
        case PolicyKind::kEcmp: return "ecmp";
        case PolicyKind::kWcmp: return "wcmp";
        case PolicyKind::kMaglev: return "maglev";
        case PolicyKind::kAquarius: return "aquarius";
    }
    return "?";
}

PolicyKind parse_policy_kind(std::string_view name) {
    if (name == "ecmp") return PolicyKind::kEcmp;
    if (name == "wcmp") return PolicyKind::kWcmp;
    if (name == "maglev") return PolicyKind::kMaglev;
    if (name == "aquarius") return PolicyKind::kAquarius;
    throw std::invalid_argument("unknown policy '" + std::string(name) + "'");
}

// ---------------------------------------------------------------- TablePolicy

TablePolicy::TablePolicy(const VipStore& store, WeightSource source, std::vector<std::uint32_t> static_weights,
                         std::uint32_t table_size)
    : store_(&store), source_(source), static_weights_(std::move(static_weights)), table_size_(table_size) {
    if (!is_prime(table_size_)) throw std::invalid_argument("maglev table size must be prime");
    for (auto& s : slots_) s.entries.assign(table_size_, 0);
    if (source_ == WeightSource::kStatic) {
        if (static_weights_.size() < store.layout().max_dips) static_weights_.resize(store.layout().max_dips, 1);
        for (auto w : static_weights_) {
            if (w == 0) throw std::invalid_argument("static weights must be positive");
        }
    }
    sync();
}

PolicyKind TablePolicy::kind() const {
    switch (source_) {
        case WeightSource::kEqual: return PolicyKind::kMaglev;
        case WeightSource::kStatic: return PolicyKind::kWcmp;
        case WeightSource::kRegisters: return PolicyKind::kAquarius;
    }
    return PolicyKind::kMaglev;
}

std::optional<Dip> TablePolicy::pick(const FiveTuple& tuple) const {
    if (!ready_.load(std::memory_order_acquire)) return ecmp_pick(tuple, *store_);
    const std::uint64_t h = hash_tuple(tuple);
    Dip dip = 0;
    for (;;) {
        const auto& slot = slots_[active_.load(std::memory_order_acquire)];
        const std::uint64_t s1 = slot.seq.load(std::memory_order_acquire);
        if (s1 == 0) continue;
        dip = std::atomic_ref<Dip>(const_cast<Dip&>(slot.entries[h % table_size_])).load(std::memory_order_relaxed);
        std::atomic_thread_fence(std::memory_order_acquire);
        if (slot.seq.load(std::memory_order_relaxed) == s1) break;
    }
    if (store_->is_active(dip)) return dip;
    return ecmp_pick(tuple, *store_);
}

bool TablePolicy::sync() {
    auto active = store_->active_dips();
    std::uint64_t generation = 0;
    std::vector<std::uint32_t> registers;
    if (source_ == WeightSource::kRegisters) {
        registers = store_->actions().read();
        generation = store_->actions().generation();
    }
    if (active == built_for_ && generation == built_generation_) return false;
    if (active.empty()) return false;

    std::vector<std::uint32_t> weights(active.size(), 1);
    for (std::size_t i = 0; i < active.size(); ++i) {
        if (source_ == WeightSource::kStatic) weights[i] = static_weights_[active[i]];
        if (source_ == WeightSource::kRegisters) weights[i] = registers[active[i]];
    }
    install(MaglevTable::build(active, weights, table_size_));
    built_for_ = std::move(active);
    built_generation_ = generation;
    ++rebuilds_;
    return true;
}

void TablePolicy::install(const MaglevTable& table) {
    const std::uint32_t target = 1 - active_.load(std::memory_order_relaxed);
    auto& slot = slots_[target];
    slot.seq.store(0, std::memory_order_relaxed);
    std::atomic_thread_fence(std::memory_order_release);
    const auto entries = table.entries();
    for (std::size_t i = 0; i < entries.size(); ++i)
        std::atomic_ref<Dip>(slot.entries[i]).store(entries[i], std::memory_order_relaxed);
    slot.seq.store(next_seq_++, std::memory_order_release);
    active_.store(target, std::memory_order_release);
    ready_.store(true, std::memory_order_release);
}

std::vector<Dip> TablePolicy::live_entries() const {
    const auto& slot = slots_[active_.load(std::memory_order_acquire)];
    std::vector<Dip> out(table_size_);
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = std::atomic_ref<Dip>(const_cast<Dip&>(slot.entries[i])).load(std::memory_order_relaxed);
    return out;
}

std::unique_ptr<Policy> make_policy(PolicyKind kind, const VipStore& store, std::vector<std::uint32_t> static_weights,
                                    std::uint32_t table_size) {
    switch (kind) {
        case PolicyKind::kEcmp: return std::make_unique<EcmpPolicy>(store);
        case PolicyKind::kMaglev:
            return std::make_unique<TablePolicy>(store, TablePolicy::WeightSource::kEqual, std::vector<std::uint32_t>{},
                                                 table_size);
        case PolicyKind::kWcmp:
            return std::make_unique<TablePolicy>(store, TablePolicy::WeightSource::kStatic, std::move(static_weights),
                                                 table_size);
        case PolicyKind::kAquarius:
            return std::make_unique<TablePolicy>(store, TablePolicy::WeightSource::kRegisters,
                                                 std::vector<std::uint32_t>{}, table_size);
    }
    throw std::invalid_argument("unknown policy kind");
}

}  // namespace aquarius
