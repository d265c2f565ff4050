#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <atomic>
#include <random>
#include <thread>

#include "aquarius/parser.hpp"
#include "aquarius/policies.hpp"

using namespace aquarius;

namespace {

FiveTuple random_tuple(std::mt19937_64& rng) {
    FiveTuple t;
    t.src_ip = static_cast<std::uint32_t>(rng());
    t.src_port = static_cast<std::uint16_t>(rng());
    t.dst_vip = 1;
    t.dst_port = 80;
    return t;
}

VipStore store_with(std::uint32_t n) {
    StoreLayout l;
    l.max_dips = n;
    l.reservoir_capacity = 4;
    auto s = VipStore::create(l);
    for (Dip d = 0; d < n; ++d) s.set_active(d, true);
    return s;
}

std::vector<Dip> iota_dips(std::uint32_t n) {
    std::vector<Dip> v(n);
    for (Dip d = 0; d < n; ++d) v[d] = d;
    return v;
}

}  // namespace

TEST_CASE("hash is fixed and documented") {
    // FNV-1a-64 with seeded basis, then fmix64; pinned so other languages can match.
    const std::array<std::uint8_t, 0> empty{};
    const std::uint64_t h0 = hash_bytes(empty, 0);
    std::uint64_t k = 0xcbf29ce484222325ULL;
    k ^= k >> 33;
    k *= 0xff51afd7ed558ccdULL;
    k ^= k >> 33;
    k *= 0xc4ceb9fe1a85ec53ULL;
    k ^= k >> 33;
    CHECK(h0 == k);
    FiveTuple t{0x0A000001, 1234, 1, 80, 6};
    const auto b = t.bytes();
    CHECK(hash_tuple(t) == hash_bytes(b, kTupleHashSeed));
    CHECK(hash_tuple(t) == hash_tuple(t));
}

TEST_CASE("ecmp basics") {
    std::mt19937_64 rng(1);
    const std::vector<Dip> one{7};
    for (int i = 0; i < 1000; ++i) CHECK(*ecmp_pick(random_tuple(rng), one) == 7);
    CHECK_FALSE(ecmp_pick(random_tuple(rng), std::span<const Dip>{}));

    const auto set = iota_dips(10);
    const auto t = random_tuple(rng);
    const Dip first = *ecmp_pick(t, set);
    bool same = true;
    for (int i = 0; i < 1000000; ++i) same = same && *ecmp_pick(t, set) == first;
    CHECK(same);
}

TEST_CASE("ecmp shares are uniform") {
    std::mt19937_64 rng(2);
    const auto set = iota_dips(10);
    std::vector<double> c(10, 0.0);
    const int n = 1000000;
    for (int i = 0; i < n; ++i) c[*ecmp_pick(random_tuple(rng), set)] += 1.0;
    double chi2 = 0.0;
    for (double x : c) {
        CHECK(std::abs(x / n - 0.1) < 0.01);
        chi2 += (x - n / 10.0) * (x - n / 10.0) / (n / 10.0);
    }
    CHECK(chi2 < 21.67);  // 9 dof, alpha 0.01
}

TEST_CASE("ecmp over the store follows the bitmap immediately") {
    auto store = store_with(4);
    std::mt19937_64 rng(3);
    store.set_active(2, false);
    for (int i = 0; i < 10000; ++i) CHECK(*ecmp_pick(random_tuple(rng), store) != 2);
    for (Dip d = 0; d < 4; ++d) store.set_active(d, false);
    CHECK_FALSE(ecmp_pick(random_tuple(rng), store));
    CHECK_FALSE(EcmpPolicy(store).pick(random_tuple(rng)));
}

TEST_CASE("maglev small tables") {
    const std::vector<Dip> one{4};
    const auto t1 = MaglevTable::build(one, 7);
    CHECK(std::all_of(t1.entries().begin(), t1.entries().end(), [](Dip d) { return d == 4; }));
    const std::vector<Dip> two{0, 1};
    const auto t2 = MaglevTable::build(two, 7);
    const auto c = t2.entry_counts(1);
    CHECK(std::max(c[0], c[1]) - std::min(c[0], c[1]) <= 1);
    CHECK(c[0] + c[1] == 7);

    CHECK_THROWS_AS(MaglevTable::build(std::span<const Dip>{}, 7), std::invalid_argument);
    CHECK_THROWS_AS(MaglevTable::build(two, 8), std::invalid_argument);
    const std::vector<std::uint32_t> bad{1, 0};
    CHECK_THROWS_AS(MaglevTable::build(two, bad, 7), std::invalid_argument);
    CHECK(is_prime(65537));
    CHECK_FALSE(is_prime(65536));
    CHECK_FALSE(is_prime(1));
}

TEST_CASE("maglev balance for up to 64 backends") {
    for (std::uint32_t n : {3u, 10u, 37u, 64u}) {
        const auto t = MaglevTable::build(iota_dips(n), 65537);
        const auto c = t.entry_counts(n - 1);
        const auto [lo, hi] = std::minmax_element(c.begin(), c.end());
        CHECK(*lo >= 1);
        CHECK(static_cast<double>(*hi) / *lo < 1.02);
    }
}

TEST_CASE("weighted maglev shares") {
    const std::vector<Dip> two{0, 1};
    const std::vector<std::uint32_t> w{1, 3};
    const auto t = MaglevTable::build(two, w, 65537);
    std::mt19937_64 rng(5);
    std::array<double, 2> c{};
    const int n = 1000000;
    for (int i = 0; i < n; ++i) ++c[weighted_pick(random_tuple(rng), t)];
    CHECK(std::abs(c[0] / n - 0.25) < 0.01);
    CHECK(std::abs(c[1] / n - 0.75) < 0.01);
}

TEST_CASE("equal weights behave like ecmp shares") {
    auto store = store_with(5);
    TablePolicy p(store, TablePolicy::WeightSource::kRegisters);
    std::mt19937_64 rng(6);
    std::vector<double> c(5, 0.0);
    const int n = 500000;
    for (int i = 0; i < n; ++i) ++c[*p.pick(random_tuple(rng))];
    for (double x : c) CHECK(std::abs(x / n - 0.2) < 0.01);
}

TEST_CASE("register-driven table follows applied weights") {
    auto store = store_with(2);
    TablePolicy p(store, TablePolicy::WeightSource::kRegisters, {}, 65537);
    CHECK(p.kind() == PolicyKind::kAquarius);
    const std::vector<std::uint32_t> w{1, 3};
    store.actions().apply_weights(w, 0.0);
    CHECK(p.sync());
    CHECK_FALSE(p.sync());
    const auto e = p.live_entries();
    const auto ones = std::count(e.begin(), e.end(), 1u);
    CHECK(std::abs(static_cast<double>(ones) / e.size() - 0.75) < 0.001);
}

TEST_CASE("weight change only moves new flows") {
    auto store = store_with(4);
    TablePolicy p(store, TablePolicy::WeightSource::kRegisters, {}, 65537);
    FlowTable table;
    std::mt19937_64 rng(7);
    std::vector<std::pair<std::uint64_t, Dip>> pinned;
    for (std::uint64_t f = 1; f <= 2000; ++f) {
        PacketEvent syn;
        syn.flow_id = f;
        syn.tuple = random_tuple(rng);
        const Dip d = *p.pick(syn.tuple);
        table.on_packet(syn, d, 0.0);
        pinned.emplace_back(f, d);
    }
    const std::vector<std::uint32_t> w{64, 1, 1, 1};
    store.actions().apply_weights(w, 0.0);
    p.sync();
    for (auto [f, d] : pinned) {
        PacketEvent ack;
        ack.flow_id = f;
        ack.kind = PacketKind::kAck;
        const auto out = table.on_packet(ack, *p.pick(random_tuple(rng)), 1.0);
        CHECK(out.dip == d);
    }
}

TEST_CASE("removing a backend disrupts little beyond its own share") {
    const auto all = iota_dips(10);
    const auto before = MaglevTable::build(all, 65537);
    std::vector<Dip> rest(all.begin() + 1, all.end());
    const auto after = MaglevTable::build(rest, 65537);
    std::size_t moved = 0;
    for (std::size_t i = 0; i < 65537; ++i)
        moved += before.entries()[i] != 0 && before.entries()[i] != after.entries()[i];
    CHECK(static_cast<double>(moved) / 65537 < 0.01);
}

TEST_CASE("table hit on a deactivated backend falls back to the active set") {
    auto store = store_with(3);
    TablePolicy p(store, TablePolicy::WeightSource::kEqual, {}, 101);
    store.set_active(1, false);
    std::mt19937_64 rng(8);
    for (int i = 0; i < 5000; ++i) CHECK(*p.pick(random_tuple(rng)) != 1);
    CHECK(p.sync());
    const auto e = p.live_entries();
    CHECK(std::count(e.begin(), e.end(), 1u) == 0);
}

TEST_CASE("wcmp uses static weights") {
    auto store = store_with(2);
    auto p = make_policy(PolicyKind::kWcmp, store, {1, 3}, 65537);
    CHECK(p->kind() == PolicyKind::kWcmp);
    std::mt19937_64 rng(9);
    double ones = 0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) ones += *p->pick(random_tuple(rng)) == 1;
    CHECK(std::abs(ones / n - 0.75) < 0.01);
    CHECK_THROWS_AS(TablePolicy(store, TablePolicy::WeightSource::kStatic, {0, 1}), std::invalid_argument);
}

TEST_CASE("policy names") {
    for (auto k : {PolicyKind::kEcmp, PolicyKind::kWcmp, PolicyKind::kMaglev, PolicyKind::kAquarius})
        CHECK(parse_policy_kind(to_string(k)) == k);
    CHECK_THROWS_AS(parse_policy_kind("random"), std::invalid_argument);
    auto store = store_with(2);
    CHECK(make_policy(PolicyKind::kMaglev, store)->kind() == PolicyKind::kMaglev);
    CHECK(make_policy(PolicyKind::kEcmp, store)->kind() == PolicyKind::kEcmp);
}

TEST_CASE("picks stay consistent while tables are rebuilt concurrently") {
    auto store = store_with(8);
    TablePolicy p(store, TablePolicy::WeightSource::kRegisters, {}, 1009);
    std::atomic<bool> stop{false};
    std::atomic<std::uint64_t> bad{0}, picks{0};
    std::thread reader([&] {
        std::mt19937_64 rng(10);
        while (!stop.load(std::memory_order_relaxed)) {
            const auto d = p.pick(random_tuple(rng));
            if (!d || *d >= 8) bad.fetch_add(1);
            picks.fetch_add(1, std::memory_order_relaxed);
        }
    });
    std::vector<std::uint32_t> w(8);
    for (int g = 1; g <= 300; ++g) {
        for (std::size_t i = 0; i < 8; ++i) w[i] = static_cast<std::uint32_t>((g + i) % 64 + 1);
        store.actions().apply_weights(w, 0.0);
        p.sync();
        std::this_thread::yield();
    }
    stop = true;
    reader.join();
    CHECK(bad == 0);
    CHECK(picks > 0);
    CHECK(p.rebuilds() >= 300);
}
