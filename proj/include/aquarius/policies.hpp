// Backend selection: ECMP hashing, Maglev consistent hashing and weighted
// Maglev (WCMP) tables driven by static weights or by the action registers.
#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "aquarius/features.hpp"
#include "aquarius/packet_model.hpp"
#include "aquarius/telemetry.hpp"

namespace aquarius {

/// Seed of the 5-tuple hash: FNV-1a-64 over the 13-byte tuple image
/// (FiveTuple::bytes) with the offset basis xored by the seed, finished with
/// the MurmurHash3 fmix64 avalanche step.
inline constexpr std::uint64_t kTupleHashSeed = 0x9E3779B97F4A7C15ULL;

std::uint64_t hash_bytes(std::span<const std::uint8_t> data, std::uint64_t seed);
std::uint64_t hash_tuple(const FiveTuple& tuple);

/// active[h(tuple) mod |active|], or nullopt when no backend is active.
std::optional<Dip> ecmp_pick(const FiveTuple& tuple, std::span<const Dip> active);
/// Same selection over the store's active bitmap (slot order).
std::optional<Dip> ecmp_pick(const FiveTuple& tuple, const VipStore& store);

bool is_prime(std::uint32_t n);

class MaglevTable {
public:
    static constexpr std::uint32_t kDefaultSize = 65537;

    /// Fills a table of prime size `table_size`. Backend b walks the
    /// permutation (offset_b + i * skip_b) mod M and claims weights[b] free
    /// slots per round. Throws std::invalid_argument on an empty backend
    /// list, zero weights, or a non-prime size.
    static MaglevTable build(std::span<const Dip> backends, std::span<const std::uint32_t> weights,
                             std::uint32_t table_size = kDefaultSize);
    static MaglevTable build(std::span<const Dip> backends, std::uint32_t table_size = kDefaultSize);

    Dip lookup(std::uint64_t hash) const { return entries_[hash % entries_.size()]; }
    Dip pick(const FiveTuple& tuple) const { return lookup(hash_tuple(tuple)); }

    std::uint32_t size() const { return static_cast<std::uint32_t>(entries_.size()); }
    std::span<const Dip> entries() const { return entries_; }
    std::span<const Dip> backends() const { return backends_; }
    std::vector<std::uint32_t> entry_counts(std::uint32_t max_dip) const;

private:
    std::vector<Dip> entries_;
    std::vector<Dip> backends_;
};

/// Selection over a weighted Maglev table (WCMP_TABLE mode).
inline Dip weighted_pick(const FiveTuple& tuple, const MaglevTable& table) { return table.pick(tuple); }

enum class PolicyKind : std::uint8_t { kEcmp, kWcmp, kMaglev, kAquarius };

std::string_view to_string(PolicyKind kind);
PolicyKind parse_policy_kind(std::string_view name);

/// Data-plane selection interface. pick() is read-only and safe to call from
/// any number of threads; sync() is control-plane work (table rebuilds) and
/// must be called from a single thread.
class Policy {
public:
    virtual ~Policy() = default;
    virtual PolicyKind kind() const = 0;
    virtual std::optional<Dip> pick(const FiveTuple& tuple) const = 0;
    /// Brings derived state (tables) up to date with the store; returns true
    /// if anything was rebuilt.
    virtual bool sync() { return false; }
};

class EcmpPolicy final : public Policy {
public:
    explicit EcmpPolicy(const VipStore& store) : store_(&store) {}
    PolicyKind kind() const override { return PolicyKind::kEcmp; }
    std::optional<Dip> pick(const FiveTuple& tuple) const override { return ecmp_pick(tuple, *store_); }

private:
    const VipStore* store_;
};

/// Maglev-family policy with a double-buffered lookup table. The control
/// plane rebuilds into the idle buffer and flips; readers retry if the buffer
/// they read was recycled underneath them. A hit on a deactivated backend
/// falls back to ECMP over the active set until the next rebuild.
class TablePolicy final : public Policy {
public:
    enum class WeightSource : std::uint8_t {
        kEqual,      // plain Maglev
        kStatic,     // WCMP with fixed per-DIP weights
        kRegisters,  // weights from the store's action registers
    };

    TablePolicy(const VipStore& store, WeightSource source, std::vector<std::uint32_t> static_weights = {},
                std::uint32_t table_size = MaglevTable::kDefaultSize);

    PolicyKind kind() const override;
    std::optional<Dip> pick(const FiveTuple& tuple) const override;
    bool sync() override;

    std::uint64_t table_generation() const { return built_generation_; }
    std::uint64_t rebuilds() const { return rebuilds_; }
    /// Snapshot of the live table (control-plane use).
    std::vector<Dip> live_entries() const;

private:
    struct Slot {
        std::atomic<std::uint64_t> seq{0};
        std::vector<Dip> entries;
    };

    void install(const MaglevTable& table);

    const VipStore* store_;
    WeightSource source_;
    std::vector<std::uint32_t> static_weights_;
    std::uint32_t table_size_;
    std::array<Slot, 2> slots_;
    std::atomic<std::uint32_t> active_{0};
    std::atomic<bool> ready_{false};
    std::uint64_t next_seq_ = 1;

    // Control-plane bookkeeping.
    std::vector<Dip> built_for_;
    std::uint64_t built_generation_ = ~0ULL;
    std::uint64_t rebuilds_ = 0;
};

std::unique_ptr<Policy> make_policy(PolicyKind kind, const VipStore& store,
                                    std::vector<std::uint32_t> static_weights = {},
                                    std::uint32_t table_size = MaglevTable::kDefaultSize);

}  // namespace aquarius
