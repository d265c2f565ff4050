// Per-VIP feature store shared between the data plane (writer) and the
// processor agent (reader).
//
// Region layout, 8-byte little-endian words:
//
//   header   [0]  magic "AQTELEM1"
//            [1]  layout version (lo32) | vip (hi32)
//            [2]  max_dips (lo32) | ring_size (hi32)
//            [3]  reservoir_capacity (lo32) | counters (hi32)
//            [4]  channels
//            [5]  frame_words
//            [6]  offset of the frame area (words)
//            [7]  offset of the action registers (words)
//            [8.. ] active-server bitmap, bit i <=> DIP slot i in service
//   frames   ring_size buffers per DIP slot, DIP-major. Buffer words:
//            seq | window_start | window_end | 8 counters |
//            13 x (count | capacity values | capacity timestamps) | checksum
//   actions  see ActionRegisters
//
// A buffer whose seq is 0 is being written. The writer always recycles the
// oldest buffer of a ring and publishes it by storing seq = previous + 1.
#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "aquarius/features.hpp"
#include "aquarius/shared_region.hpp"

namespace aquarius {

inline constexpr std::uint64_t kTelemetryMagic = 0x314D454C45545141ULL;  // "AQTELEM1"
inline constexpr std::uint32_t kTelemetryLayoutVersion = 1;

struct StoreLayout {
    Vip vip = 0;
    std::uint32_t max_dips = 64;
    std::uint32_t ring_size = 4;
    std::uint32_t reservoir_capacity = 128;

    std::size_t bitmap_words() const { return (max_dips + 63) / 64; }
    std::size_t frame_words() const;
    std::size_t frames_offset() const { return 8 + bitmap_words(); }
    std::size_t actions_offset() const;
    std::size_t total_words() const;
    void validate() const;
};

/// Fixed-capacity uniform sample of the values seen since the window start
/// (Algorithm R).
class ReservoirSampler {
public:
    explicit ReservoirSampler(std::size_t capacity = 128);

    template <class Rng>
    void insert(double value, double now, Rng& rng) {
        ++seen_;
        if (values_.size() < capacity_) {
            values_.push_back(value);
            stamps_.push_back(now);
            return;
        }
        const auto j = std::uniform_int_distribution<std::uint64_t>(0, seen_ - 1)(rng);
        if (j < capacity_) {
            values_[j] = value;
            stamps_[j] = now;
        }
    }

    /// Starts a new window: seen = 0, no slots.
    void reset(double window_start);

    std::size_t capacity() const { return capacity_; }
    std::uint64_t seen() const { return seen_; }
    double window_start() const { return window_start_; }
    std::span<const double> values() const { return values_; }
    std::span<const double> stamps() const { return stamps_; }

private:
    std::size_t capacity_;
    std::uint64_t seen_ = 0;
    double window_start_ = 0.0;
    std::vector<double> values_;
    std::vector<double> stamps_;
};

struct ChannelSamples {
    std::vector<double> values;
    std::vector<double> stamps;
};

/// Reader-side copy of one published buffer.
struct FeatureFrame {
    Vip vip = 0;
    Dip dip = 0;
    std::uint64_t seq = 0;
    double window_start = 0.0;
    double window_end = 0.0;
    std::array<std::uint64_t, kNumCounters> counters{};
    std::array<ChannelSamples, kNumChannels> channels;

    std::uint64_t counter(Counter c) const { return counters[index(c)]; }
    const ChannelSamples& channel(Channel c) const { return channels[index(c)]; }
};

/// Double-buffered per-DIP weight registers living in the store region.
///
///   [0] active half   [1] generation   [2] apply time (double bits)
///   half h: seq (generation + 1, 0 while written) | max_dips weights
class ActionRegisters {
public:
    static constexpr std::uint32_t kMinWeight = 1;
    static constexpr std::uint32_t kMaxWeight = 64;

    ActionRegisters(std::span<std::uint64_t> words, std::uint32_t max_dips);

    static std::size_t words_needed(std::uint32_t max_dips) { return 3 + 2 * (1 + std::size_t{max_dips}); }
    /// Sets generation 0 with every weight 1.
    void initialize();

    /// Writes the inactive half then flips it live. Weights beyond
    /// `weights.size()` are set to 1. Throws std::out_of_range, leaving the
    /// registers untouched, when any weight is outside [1, 64].
    std::uint64_t apply_weights(std::span<const std::uint32_t> weights, double now);

    /// Copies a fully written half into `out` (size max_dips) and returns its
    /// generation.
    std::uint64_t read(std::span<std::uint32_t> out) const;
    std::vector<std::uint32_t> read() const;

    std::uint64_t generation() const;
    std::uint32_t max_dips() const { return max_dips_; }

private:
    std::uint64_t& half_seq(std::size_t h) const;
    std::uint64_t& half_weight(std::size_t h, std::size_t dip) const;

    std::span<std::uint64_t> words_;
    std::uint32_t max_dips_;
};

/// Handle on one VIP's telemetry region.
class VipStore {
public:
    static VipStore create(const StoreLayout& layout);
    static VipStore create_shared(const std::string& shm_name, const StoreLayout& layout);
    /// Maps an existing region and checks its magic, version and size.
    static VipStore open_shared(const std::string& shm_name);

    const StoreLayout& layout() const { return layout_; }
    Vip vip() const { return layout_.vip; }

    void set_active(Dip dip, bool active);
    bool is_active(Dip dip) const;
    std::vector<Dip> active_dips() const;
    std::size_t active_count() const;
    /// k-th active DIP in slot order (k < active_count()).
    Dip nth_active(std::size_t k) const;

    ActionRegisters& actions() { return actions_; }
    const ActionRegisters& actions() const { return actions_; }

    std::span<std::uint64_t> buffer(Dip dip, std::uint32_t slot);
    std::span<const std::uint64_t> buffer(Dip dip, std::uint32_t slot) const;

private:
    VipStore(SharedRegion region, const StoreLayout& layout);
    void write_header();
    std::uint64_t& bitmap_word(std::size_t i) const;

    SharedRegion region_;
    StoreLayout layout_;
    ActionRegisters actions_;
};

/// Data-plane side: accumulates the open window per DIP and publishes frames.
/// One writer per store; counters use atomic read-modify-write so several
/// threads may add to them.
class FrameWriter {
public:
    explicit FrameWriter(VipStore& store, std::uint64_t seed = 0x5eed, double start_time = 0.0);

    void add(Dip dip, Counter counter, std::int64_t delta);
    void observe(Dip dip, Channel channel, double value, double now);

    /// Publishes the open window of `dip` as [window_start, now] and opens a
    /// new one. Returns the new sequence number.
    std::uint64_t publish_frame(Dip dip, double now);

    std::uint64_t last_seq(Dip dip) const { return windows_[dip].last_seq; }
    const ReservoirSampler& sampler(Dip dip, Channel channel) const { return windows_[dip].channels[index(channel)]; }
    std::int64_t gauge(Dip dip) const { return windows_[dip].gauge.load(std::memory_order_relaxed); }

private:
    struct OpenWindow {
        std::array<std::atomic<std::uint64_t>, kNumCounters> counters{};
        std::atomic<std::int64_t> gauge{0};
        std::vector<ReservoirSampler> channels;
        double window_start = 0.0;
        std::uint64_t last_seq = 0;
        std::uint32_t next_slot = 0;
    };

    VipStore* store_;
    std::deque<OpenWindow> windows_;
    std::mt19937_64 rng_;
};

struct DipHistory {
    struct Entry {
        double fetched_at;
        FeatureFrame frame;
    };
    Dip dip = 0;
    std::deque<Entry> entries;
};

/// Processor side: lock-free consumer of published frames.
class FrameReader {
public:
    /// History keeps at most `history_capacity` frames per DIP (oldest dropped).
    explicit FrameReader(const VipStore& store, std::size_t history_capacity = 4096);

    /// Newest published frame of every active DIP; DIPs without a published
    /// frame are absent. New frames are appended to the DIP's history.
    std::map<Dip, FeatureFrame> fetch_latest(double fetch_time = 0.0);

    /// Newest consistent frame of one DIP, regardless of the bitmap.
    std::optional<FeatureFrame> read_latest(Dip dip);

    const DipHistory* history(Dip dip) const;
    /// Copies invalidated by a concurrent publish and retried.
    std::uint64_t retries() const { return retries_; }
    /// Consistent copies whose embedded checksum did not match (always 0 if
    /// the protocol holds).
    std::uint64_t checksum_failures() const { return checksum_failures_; }

private:
    const VipStore* store_;
    std::size_t history_capacity_;
    std::map<Dip, DipHistory> history_;
    std::uint64_t retries_ = 0;
    std::uint64_t checksum_failures_ = 0;
};

/// Folds frames of the same DIP published by several writers (one per
/// data-plane worker) into one: counters add, samples concatenate, the
/// window is the union. The result carries the smallest seq.
FeatureFrame merge_frames(std::span<const FeatureFrame> frames);

/// Checksum as embedded by the writer over a decoded frame.
std::uint64_t frame_checksum(const FeatureFrame& frame);

}  // namespace aquarius
