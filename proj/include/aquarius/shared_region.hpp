#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace aquarius {

/// A word-addressed memory region, either private to the process or backed by
/// a POSIX shared-memory object so another process can map the same bytes.
class SharedRegion {
public:
    SharedRegion() = default;
    ~SharedRegion();
    SharedRegion(SharedRegion&& other) noexcept;
    SharedRegion& operator=(SharedRegion&& other) noexcept;
    SharedRegion(const SharedRegion&) = delete;
    SharedRegion& operator=(const SharedRegion&) = delete;

    static SharedRegion anonymous(std::size_t words);
    /// Creates (truncating any stale object) and maps `name`, e.g. "/aq_vip0".
    /// The object is unlinked when the creating handle is destroyed.
    static SharedRegion create_shm(const std::string& name, std::size_t words);
    static SharedRegion open_shm(const std::string& name);

    std::span<std::uint64_t> words() { return {data_, size_}; }
    std::span<const std::uint64_t> words() const { return {data_, size_}; }
    bool is_shared() const { return mapped_; }
    const std::string& name() const { return name_; }

private:
    void release() noexcept;

    std::vector<std::uint64_t> heap_;
    std::uint64_t* data_ = nullptr;
    std::size_t size_ = 0;
    bool mapped_ = false;
    bool owner_ = false;
    std::string name_;
};

}  // namespace aquarius
