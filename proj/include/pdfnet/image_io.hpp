#pragma once

#include <torch/torch.h>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <filesystem>
#include <string>

#include "pdfnet/errors.hpp"

namespace pdfnet {

namespace fs = std::filesystem;

// PNG <-> torch helpers. Decoding is raw sample values only (no color
// management, no orientation fixups); resampling is left to torch.

namespace detail {
inline void imwrite_or_throw(const fs::path& path, const cv::Mat& m) {
    bool ok = false;
    try {
        ok = cv::imwrite(path.string(), m);
    } catch (const cv::Exception& e) {
        throw IoError("cannot write " + path.string() + ": " + e.what());
    }
    if (!ok) {
        throw IoError("cannot write " + path.string());
    }
}
}  // namespace detail

// Reads an RGB image as 1x3xHxW float in [0,1].
inline torch::Tensor read_image_rgb(const fs::path& path) {
    if (!fs::exists(path)) {
        throw NotFoundError("missing file: " + path.string());
    }
    cv::Mat m = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (m.empty()) {
        throw DataError("unreadable image: " + path.string());
    }
    auto t = torch::from_blob(m.data, {m.rows, m.cols, 3}, torch::kUInt8).clone();
    // OpenCV decodes BGR; flip the channel axis.
    t = t.flip(2).permute({2, 0, 1}).unsqueeze(0).to(torch::kFloat32).div_(255.0);
    return t;
}

// Reads a single-channel 8- or 16-bit PNG as 1x1xHxW float in [0,1],
// normalized by the bit-depth maximum.
inline torch::Tensor read_gray(const fs::path& path) {
    if (!fs::exists(path)) {
        throw NotFoundError("missing file: " + path.string());
    }
    cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
    if (m.empty()) {
        throw DataError("unreadable image: " + path.string());
    }
    if (m.channels() != 1) {
        throw DataError("expected single-channel image, got " + std::to_string(m.channels()) +
                        " channels: " + path.string());
    }
    torch::Tensor t;
    if (m.depth() == CV_8U) {
        t = torch::from_blob(m.data, {m.rows, m.cols}, torch::kUInt8).clone().to(torch::kFloat32).div_(255.0);
    } else if (m.depth() == CV_16U) {
        t = torch::from_blob(m.data, {m.rows, m.cols}, torch::kUInt16).clone().to(torch::kFloat32).div_(65535.0);
    } else {
        throw DataError("unsupported bit depth for: " + path.string());
    }
    return t.unsqueeze(0).unsqueeze(0);
}

// Writes a 1x1xHxW (or HxW) float tensor in [0,1] as an 8-bit grayscale PNG.
inline void write_gray8(const fs::path& path, const torch::Tensor& t) {
    auto x = t.detach().to(torch::kFloat32).squeeze();
    if (x.dim() != 2) {
        throw ShapeError("write_gray8: expected a single-channel map");
    }
    auto q = (x.clamp(0, 1) * 255.0).round().to(torch::kUInt8).contiguous();
    cv::Mat m(static_cast<int>(q.size(0)), static_cast<int>(q.size(1)), CV_8UC1,
              q.data_ptr<uint8_t>());
    detail::imwrite_or_throw(path, m);
}

// 16-bit variant, used for depth maps where 8 bits would quantize away the
// foreground noise floor.
inline void write_gray16(const fs::path& path, const torch::Tensor& t) {
    auto x = t.detach().to(torch::kFloat32).squeeze();
    if (x.dim() != 2) {
        throw ShapeError("write_gray16: expected a single-channel map");
    }
    auto q = (x.clamp(0, 1) * 65535.0).round().to(torch::kInt32).contiguous();
    cv::Mat m(static_cast<int>(q.size(0)), static_cast<int>(q.size(1)), CV_16UC1);
    auto acc = q.accessor<int32_t, 2>();
    for (int r = 0; r < m.rows; ++r) {
        for (int c = 0; c < m.cols; ++c) {
            m.at<uint16_t>(r, c) = static_cast<uint16_t>(acc[r][c]);
        }
    }
    detail::imwrite_or_throw(path, m);
}

// Writes a 1x3xHxW float tensor in [0,1] as an 8-bit RGB PNG.
inline void write_rgb8(const fs::path& path, const torch::Tensor& t) {
    auto x = t.detach().to(torch::kFloat32).squeeze(0);
    if (x.dim() != 3 || x.size(0) != 3) {
        throw ShapeError("write_rgb8: expected 3xHxW");
    }
    auto q = (x.clamp(0, 1) * 255.0).round().to(torch::kUInt8);
    q = q.permute({1, 2, 0}).flip(2).contiguous();  // RGB -> BGR
    cv::Mat m(static_cast<int>(q.size(0)), static_cast<int>(q.size(1)), CV_8UC3,
              q.data_ptr<uint8_t>());
    detail::imwrite_or_throw(path, m);
}

}  // namespace pdfnet
