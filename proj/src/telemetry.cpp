#include "aquarius/telemetry.hpp"

#include <algorithm>
#include <bit>
#include <stdexcept>
#include <string>

namespace aquarius {

namespace {

using Word = std::uint64_t;

inline Word load(const Word& w, std::memory_order order = std::memory_order_relaxed) {
    return std::atomic_ref<Word>(const_cast<Word&>(w)).load(order);
}
inline void store(Word& w, Word v, std::memory_order order = std::memory_order_relaxed) {
    std::atomic_ref<Word>(w).store(v, order);
}
inline Word bits(double d) { return std::bit_cast<Word>(d); }
inline double real(Word w) { return std::bit_cast<double>(w); }

// Word offsets inside a frame buffer.
constexpr std::size_t kSeq = 0;
constexpr std::size_t kWindowStart = 1;
constexpr std::size_t kWindowEnd = 2;
constexpr std::size_t kCounters = 3;
constexpr std::size_t kChannels = kCounters + kNumCounters;

constexpr std::size_t channel_words(std::size_t capacity) { return 1 + 2 * capacity; }

struct Checksum {
    Word h = 0xcbf29ce484222325ULL;
    void feed(Word w) {
        h ^= w;
        h *= 0x100000001b3ULL;
        h ^= h >> 29;
    }
};

constexpr int kReadAttempts = 16;

}  // namespace

// ---------------------------------------------------------------- layout

std::size_t StoreLayout::frame_words() const {
    return kChannels + kNumChannels * channel_words(reservoir_capacity) + 1;
}

std::size_t StoreLayout::actions_offset() const {
    return frames_offset() + std::size_t{max_dips} * ring_size * frame_words();
}

std::size_t StoreLayout::total_words() const {
    return actions_offset() + ActionRegisters::words_needed(max_dips);
}

void StoreLayout::validate() const {
    if (max_dips == 0) throw std::invalid_argument("max_dips must be >= 1");
    if (ring_size < 2) throw std::invalid_argument("ring_size must be >= 2");
    if (reservoir_capacity == 0) throw std::invalid_argument("reservoir_capacity must be >= 1");
}

// ---------------------------------------------------------------- reservoir

ReservoirSampler::ReservoirSampler(std::size_t capacity) : capacity_(capacity) {
    if (capacity_ == 0) throw std::invalid_argument("reservoir capacity must be >= 1");
    values_.reserve(capacity_);
    stamps_.reserve(capacity_);
}

void ReservoirSampler::reset(double window_start) {
    seen_ = 0;
    window_start_ = window_start;
    values_.clear();
    stamps_.clear();
}

// ---------------------------------------------------------------- actions

ActionRegisters::ActionRegisters(std::span<std::uint64_t> words, std::uint32_t max_dips)
    : words_(words), max_dips_(max_dips) {
    if (words_.size() < words_needed(max_dips)) throw std::invalid_argument("action register area too small");
}

std::uint64_t& ActionRegisters::half_seq(std::size_t h) const { return words_[3 + h * (1 + max_dips_)]; }

std::uint64_t& ActionRegisters::half_weight(std::size_t h, std::size_t dip) const {
    return words_[3 + h * (1 + max_dips_) + 1 + dip];
}

void ActionRegisters::initialize() {
    for (std::size_t h = 0; h < 2; ++h) {
        for (std::size_t d = 0; d < max_dips_; ++d) store(half_weight(h, d), kMinWeight);
    }
    store(half_seq(1), 0);
    store(words_[2], bits(0.0));
    store(words_[1], 0);
    store(half_seq(0), 1, std::memory_order_release);
    store(words_[0], 0, std::memory_order_release);
}

std::uint64_t ActionRegisters::apply_weights(std::span<const std::uint32_t> weights, double now) {
    if (weights.size() > max_dips_)
        throw std::out_of_range("weight vector longer than the DIP slot array (" + std::to_string(weights.size()) +
                                " > " + std::to_string(max_dips_) + ")");
    for (std::size_t d = 0; d < weights.size(); ++d) {
        if (weights[d] < kMinWeight || weights[d] > kMaxWeight)
            throw std::out_of_range("weight " + std::to_string(weights[d]) + " for dip " + std::to_string(d) +
                                    " outside [1, 64]");
    }
    const Word active = load(words_[0], std::memory_order_acquire);
    const Word next_gen = load(words_[1]) + 1;
    const std::size_t target = 1 - active;

    store(half_seq(target), 0);
    std::atomic_thread_fence(std::memory_order_release);
    for (std::size_t d = 0; d < max_dips_; ++d)
        store(half_weight(target, d), d < weights.size() ? weights[d] : kMinWeight);
    store(half_seq(target), next_gen + 1, std::memory_order_release);
    store(words_[2], bits(now));
    store(words_[0], target, std::memory_order_release);
    store(words_[1], next_gen, std::memory_order_release);
    return next_gen;
}

std::uint64_t ActionRegisters::read(std::span<std::uint32_t> out) const {
    if (out.size() < max_dips_) throw std::invalid_argument("output span smaller than max_dips");
    for (;;) {
        const auto h = static_cast<std::size_t>(load(words_[0], std::memory_order_acquire));
        const Word s1 = load(half_seq(h), std::memory_order_acquire);
        if (s1 == 0) continue;
        for (std::size_t d = 0; d < max_dips_; ++d) out[d] = static_cast<std::uint32_t>(load(half_weight(h, d)));
        std::atomic_thread_fence(std::memory_order_acquire);
        if (load(half_seq(h)) == s1) return s1 - 1;
    }
}

std::vector<std::uint32_t> ActionRegisters::read() const {
    std::vector<std::uint32_t> out(max_dips_);
    read(out);
    return out;
}

std::uint64_t ActionRegisters::generation() const { return load(words_[1], std::memory_order_acquire); }

// ---------------------------------------------------------------- store

VipStore::VipStore(SharedRegion region, const StoreLayout& layout)
    : region_(std::move(region)),
      layout_(layout),
      actions_(region_.words().subspan(layout.actions_offset()), layout.max_dips) {}

VipStore VipStore::create(const StoreLayout& layout) {
    layout.validate();
    VipStore s(SharedRegion::anonymous(layout.total_words()), layout);
    s.write_header();
    return s;
}

VipStore VipStore::create_shared(const std::string& shm_name, const StoreLayout& layout) {
    layout.validate();
    VipStore s(SharedRegion::create_shm(shm_name, layout.total_words()), layout);
    s.write_header();
    return s;
}

VipStore VipStore::open_shared(const std::string& shm_name) {
    SharedRegion region = SharedRegion::open_shm(shm_name);
    auto w = region.words();
    if (w.size() < 8 || load(w[0], std::memory_order_acquire) != kTelemetryMagic)
        throw std::runtime_error("'" + shm_name + "' is not a telemetry region");
    if ((load(w[1]) & 0xffffffffu) != kTelemetryLayoutVersion)
        throw std::runtime_error("'" + shm_name + "' has unsupported layout version");
    StoreLayout layout;
    layout.vip = static_cast<Vip>(load(w[1]) >> 32);
    layout.max_dips = static_cast<std::uint32_t>(load(w[2]));
    layout.ring_size = static_cast<std::uint32_t>(load(w[2]) >> 32);
    layout.reservoir_capacity = static_cast<std::uint32_t>(load(w[3]));
    layout.validate();
    if (load(w[5]) != layout.frame_words() || w.size() < layout.total_words())
        throw std::runtime_error("'" + shm_name + "' has an inconsistent layout");
    return VipStore(std::move(region), layout);
}

void VipStore::write_header() {
    auto w = region_.words();
    store(w[1], kTelemetryLayoutVersion | (Word{layout_.vip} << 32));
    store(w[2], layout_.max_dips | (Word{layout_.ring_size} << 32));
    store(w[3], layout_.reservoir_capacity | (Word{kNumCounters} << 32));
    store(w[4], kNumChannels);
    store(w[5], layout_.frame_words());
    store(w[6], layout_.frames_offset());
    store(w[7], layout_.actions_offset());
    actions_.initialize();
    store(w[0], kTelemetryMagic, std::memory_order_release);
}

std::uint64_t& VipStore::bitmap_word(std::size_t i) const {
    return const_cast<SharedRegion&>(region_).words()[8 + i];
}

void VipStore::set_active(Dip dip, bool active) {
    if (dip >= layout_.max_dips) throw std::out_of_range("dip slot " + std::to_string(dip) + " does not exist");
    std::atomic_ref<Word> word(bitmap_word(dip / 64));
    const Word mask = Word{1} << (dip % 64);
    if (active)
        word.fetch_or(mask, std::memory_order_acq_rel);
    else
        word.fetch_and(~mask, std::memory_order_acq_rel);
}

bool VipStore::is_active(Dip dip) const {
    if (dip >= layout_.max_dips) return false;
    return (load(bitmap_word(dip / 64), std::memory_order_acquire) >> (dip % 64)) & 1;
}

std::vector<Dip> VipStore::active_dips() const {
    std::vector<Dip> out;
    for (std::size_t i = 0; i < layout_.bitmap_words(); ++i) {
        Word w = load(bitmap_word(i), std::memory_order_acquire);
        while (w != 0) {
            out.push_back(static_cast<Dip>(i * 64 + std::countr_zero(w)));
            w &= w - 1;
        }
    }
    return out;
}

std::size_t VipStore::active_count() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < layout_.bitmap_words(); ++i)
        n += std::popcount(load(bitmap_word(i), std::memory_order_acquire));
    return n;
}

Dip VipStore::nth_active(std::size_t k) const {
    for (std::size_t i = 0; i < layout_.bitmap_words(); ++i) {
        Word w = load(bitmap_word(i), std::memory_order_acquire);
        const auto n = static_cast<std::size_t>(std::popcount(w));
        if (k >= n) {
            k -= n;
            continue;
        }
        for (; k > 0; --k) w &= w - 1;
        return static_cast<Dip>(i * 64 + std::countr_zero(w));
    }
    throw std::out_of_range("fewer active dips than requested index");
}

std::span<std::uint64_t> VipStore::buffer(Dip dip, std::uint32_t slot) {
    const auto fw = layout_.frame_words();
    return region_.words().subspan(layout_.frames_offset() + (std::size_t{dip} * layout_.ring_size + slot) * fw, fw);
}

std::span<const std::uint64_t> VipStore::buffer(Dip dip, std::uint32_t slot) const {
    return const_cast<VipStore*>(this)->buffer(dip, slot);
}

// ---------------------------------------------------------------- writer

FrameWriter::FrameWriter(VipStore& store, std::uint64_t seed, double start_time)
    : store_(&store), windows_(store.layout().max_dips), rng_(seed) {
    for (auto& w : windows_) {
        w.channels.assign(kNumChannels, ReservoirSampler(store.layout().reservoir_capacity));
        for (auto& c : w.channels) c.reset(start_time);
        w.window_start = start_time;
    }
}

void FrameWriter::add(Dip dip, Counter counter, std::int64_t delta) {
    auto& w = windows_[dip];
    if (counter == Counter::kFlowOngoing) {
        w.gauge.fetch_add(delta, std::memory_order_relaxed);
        return;
    }
    w.counters[index(counter)].fetch_add(static_cast<std::uint64_t>(delta), std::memory_order_relaxed);
}

void FrameWriter::observe(Dip dip, Channel channel, double value, double now) {
    windows_[dip].channels[index(channel)].insert(value, now, rng_);
}

std::uint64_t FrameWriter::publish_frame(Dip dip, double now) {
    auto& w = windows_[dip];
    auto buf = store_->buffer(dip, w.next_slot);
    const std::size_t cap = store_->layout().reservoir_capacity;
    const std::uint64_t seq = w.last_seq + 1;
    Checksum sum;

    store(buf[kSeq], 0);
    std::atomic_thread_fence(std::memory_order_release);

    sum.feed(seq);
    store(buf[kWindowStart], bits(w.window_start));
    sum.feed(bits(w.window_start));
    store(buf[kWindowEnd], bits(now));
    sum.feed(bits(now));
    for (std::size_t c = 0; c < kNumCounters; ++c) {
        Word v = c == index(Counter::kFlowOngoing)
                     ? static_cast<Word>(std::max<std::int64_t>(0, w.gauge.load(std::memory_order_relaxed)))
                     : w.counters[c].exchange(0, std::memory_order_relaxed);
        store(buf[kCounters + c], v);
        sum.feed(v);
    }
    for (std::size_t ch = 0; ch < kNumChannels; ++ch) {
        auto& sampler = w.channels[ch];
        const std::size_t base = kChannels + ch * channel_words(cap);
        const auto values = sampler.values();
        const auto stamps = sampler.stamps();
        store(buf[base], values.size());
        sum.feed(values.size());
        for (std::size_t i = 0; i < values.size(); ++i) {
            store(buf[base + 1 + i], bits(values[i]));
            sum.feed(bits(values[i]));
        }
        for (std::size_t i = 0; i < stamps.size(); ++i) {
            store(buf[base + 1 + cap + i], bits(stamps[i]));
            sum.feed(bits(stamps[i]));
        }
        sampler.reset(now);
    }
    store(buf[buf.size() - 1], sum.h);
    store(buf[kSeq], seq, std::memory_order_release);

    w.last_seq = seq;
    w.window_start = now;
    w.next_slot = (w.next_slot + 1) % store_->layout().ring_size;
    return seq;
}

// ---------------------------------------------------------------- reader

std::uint64_t frame_checksum(const FeatureFrame& frame) {
    Checksum sum;
    sum.feed(frame.seq);
    sum.feed(bits(frame.window_start));
    sum.feed(bits(frame.window_end));
    for (auto c : frame.counters) sum.feed(c);
    for (const auto& ch : frame.channels) {
        sum.feed(ch.values.size());
        for (double v : ch.values) sum.feed(bits(v));
        for (double t : ch.stamps) sum.feed(bits(t));
    }
    return sum.h;
}

FrameReader::FrameReader(const VipStore& store, std::size_t history_capacity)
    : store_(&store), history_capacity_(history_capacity) {}

std::optional<FeatureFrame> FrameReader::read_latest(Dip dip) {
    const auto& layout = store_->layout();
    const std::size_t cap = layout.reservoir_capacity;
    if (dip >= layout.max_dips) return std::nullopt;

    for (int attempt = 0; attempt < kReadAttempts; ++attempt) {
        std::uint32_t best_slot = 0;
        Word best_seq = 0;
        for (std::uint32_t s = 0; s < layout.ring_size; ++s) {
            const Word seq = load(store_->buffer(dip, s)[kSeq], std::memory_order_acquire);
            if (seq > best_seq) {
                best_seq = seq;
                best_slot = s;
            }
        }
        if (best_seq == 0) return std::nullopt;

        const auto buf = store_->buffer(dip, best_slot);
        const Word s1 = load(buf[kSeq], std::memory_order_acquire);
        if (s1 != best_seq) {
            ++retries_;
            continue;
        }
        FeatureFrame f;
        f.vip = layout.vip;
        f.dip = dip;
        f.seq = s1;
        f.window_start = real(load(buf[kWindowStart]));
        f.window_end = real(load(buf[kWindowEnd]));
        for (std::size_t c = 0; c < kNumCounters; ++c) f.counters[c] = load(buf[kCounters + c]);
        bool sane = true;
        for (std::size_t ch = 0; ch < kNumChannels && sane; ++ch) {
            const std::size_t base = kChannels + ch * channel_words(cap);
            const Word n = load(buf[base]);
            if (n > cap) {
                sane = false;  // torn; rejected by the seq recheck below
                break;
            }
            auto& out = f.channels[ch];
            out.values.resize(n);
            out.stamps.resize(n);
            for (std::size_t i = 0; i < n; ++i) {
                out.values[i] = real(load(buf[base + 1 + i]));
                out.stamps[i] = real(load(buf[base + 1 + cap + i]));
            }
        }
        const Word embedded = load(buf[buf.size() - 1]);
        std::atomic_thread_fence(std::memory_order_acquire);
        if (load(buf[kSeq]) != s1 || !sane) {
            ++retries_;
            continue;
        }
        if (frame_checksum(f) != embedded) {
            ++checksum_failures_;
            continue;
        }
        return f;
    }
    return std::nullopt;
}

std::map<Dip, FeatureFrame> FrameReader::fetch_latest(double fetch_time) {
    std::map<Dip, FeatureFrame> out;
    for (Dip dip : store_->active_dips()) {
        auto frame = read_latest(dip);
        if (!frame) continue;
        auto& hist = history_[dip];
        hist.dip = dip;
        if (hist.entries.empty() || hist.entries.back().frame.seq < frame->seq) {
            if (history_capacity_ > 0) {
                if (hist.entries.size() == history_capacity_) hist.entries.pop_front();
                hist.entries.push_back({fetch_time, *frame});
            }
        }
        out.emplace(dip, std::move(*frame));
    }
    return out;
}

const DipHistory* FrameReader::history(Dip dip) const {
    auto it = history_.find(dip);
    return it == history_.end() ? nullptr : &it->second;
}

FeatureFrame merge_frames(std::span<const FeatureFrame> frames) {
    if (frames.empty()) throw std::invalid_argument("merge_frames needs at least one frame");
    FeatureFrame out = frames.front();
    for (const auto& f : frames.subspan(1)) {
        out.seq = std::min(out.seq, f.seq);
        out.window_start = std::min(out.window_start, f.window_start);
        out.window_end = std::max(out.window_end, f.window_end);
        for (std::size_t c = 0; c < kNumCounters; ++c) out.counters[c] += f.counters[c];
        for (std::size_t ch = 0; ch < kNumChannels; ++ch) {
            auto& dst = out.channels[ch];
            const auto& src = f.channels[ch];
            dst.values.insert(dst.values.end(), src.values.begin(), src.values.end());
            dst.stamps.insert(dst.stamps.end(), src.stamps.begin(), src.stamps.end());
        }
    }
    return out;
}

}  // namespace aquarius
