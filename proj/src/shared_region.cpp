#include "aquarius/shared_region.hpp"

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <stdexcept>
#include <utility>

namespace aquarius {

namespace {

std::runtime_error sys_error(const std::string& what, const std::string& name) {
    return std::runtime_error(what + " '" + name + "': " + std::strerror(errno));
}

}  // namespace

SharedRegion::~SharedRegion() { release(); }

SharedRegion::SharedRegion(SharedRegion&& other) noexcept { *this = std::move(other); }

SharedRegion& SharedRegion::operator=(SharedRegion&& other) noexcept {
    if (this == &other) return *this;
    release();
    heap_ = std::move(other.heap_);
    data_ = other.mapped_ ? other.data_ : heap_.data();
    size_ = other.size_;
    mapped_ = other.mapped_;
    owner_ = other.owner_;
    name_ = std::move(other.name_);
    other.data_ = nullptr;
    other.size_ = 0;
    other.mapped_ = false;
    other.owner_ = false;
    return *this;
}

void SharedRegion::release() noexcept {
    if (mapped_ && data_ != nullptr) {
        ::munmap(data_, size_ * sizeof(std::uint64_t));
        if (owner_) ::shm_unlink(name_.c_str());
    }
    heap_.clear();
    data_ = nullptr;
    size_ = 0;
    mapped_ = false;
    owner_ = false;
}

SharedRegion SharedRegion::anonymous(std::size_t words) {
    SharedRegion r;
    r.heap_.assign(words, 0);
    r.data_ = r.heap_.data();
    r.size_ = words;
    return r;
}

SharedRegion SharedRegion::create_shm(const std::string& name, std::size_t words) {
    const int fd = ::shm_open(name.c_str(), O_CREAT | O_RDWR | O_TRUNC, 0600);
    if (fd < 0) throw sys_error("shm_open", name);
    const auto bytes = static_cast<off_t>(words * sizeof(std::uint64_t));
    if (::ftruncate(fd, bytes) != 0) {
        ::close(fd);
        ::shm_unlink(name.c_str());
        throw sys_error("ftruncate", name);
    }
    void* p = ::mmap(nullptr, static_cast<std::size_t>(bytes), PROT_READ | PROT_WRITE, MAP_SHARED, fd, 0);
    ::close(fd);
    if (p == MAP_FAILED) {
        ::shm_unlink(name.c_str());
        throw sys_error("mmap", name);
    }
    SharedRegion r;
    r.data_ = static_cast<std::uint64_t*>(p);
    r.size_ = words;
    r.mapped_ = true;
    r.owner_ = true;
    r.name_ = name;
    return r;
}

SharedRegion SharedRegion::open_shm(const std::string& name) {
    const int fd = ::shm_open(name.c_str(), O_RDWR, 0600);
    if (fd < 0) throw sys_error("shm_open", name);
    struct stat st {};
    if (::fstat(fd, &st) != 0) {
        ::close(fd);
        throw sys_error("fstat", name);
    }
    const auto bytes = static_cast<std::size_t>(st.st_size);
    void* p = ::mmap(nullptr, bytes, PROT_READ | PROT_WRITE, MAP_SHARED, fd, 0);
    ::close(fd);
    if (p == MAP_FAILED) throw sys_error("mmap", name);
    SharedRegion r;
    r.data_ = static_cast<std::uint64_t*>(p);
    r.size_ = bytes / sizeof(std::uint64_t);
    r.mapped_ = true;
    r.name_ = name;
    return r;
}

}  // namespace aquarius
