#include "fundus/image.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "fundus/error.hpp"

namespace fundus {

ImageTensor::ImageTensor(torch::Tensor chw) {
    if (chw.dim() != 3 || chw.size(0) != 3) {
        fail(ErrorKind::InvalidInput, "image tensor must have shape [3, H, W]");
    }
    if (chw.numel() == 0) fail(ErrorKind::InvalidInput, "image tensor is empty");
    chw = chw.detach().to(torch::kFloat32).contiguous();
    if (!torch::isfinite(chw).all().item<bool>()) fail(ErrorKind::InvalidInput, "image has non-finite values");
    const double lo = chw.min().item<double>();
    const double hi = chw.max().item<double>();
    if (lo < -1e-6 || hi > 1.0 + 1e-6) fail(ErrorKind::InvalidInput, "image values must lie in [0,1]");
    data_ = chw.clamp(0.0, 1.0);
}

ImageTensor ImageTensor::filled(std::int64_t height, std::int64_t width, float value) {
    return ImageTensor(torch::full({3, height, width}, value));
}

torch::Tensor stack_images(const std::vector<ImageTensor>& images) {
    if (images.empty()) fail(ErrorKind::InvalidInput, "cannot stack an empty image list");
    std::vector<torch::Tensor> ts;
    ts.reserve(images.size());
    for (const auto& im : images) {
        if (im.height() != images.front().height() || im.width() != images.front().width()) {
            fail(ErrorKind::InvalidInput, "images in a batch must share dimensions");
        }
        ts.push_back(im.tensor());
    }
    return torch::stack(ts);
}

ImageTensor load_image(const std::filesystem::path& path, std::int64_t target_size) {
    if (target_size < 1) fail(ErrorKind::InvalidInput, "target size must be positive");
    if (!std::filesystem::exists(path)) fail(ErrorKind::Io, "image not found: " + path.string());
    cv::Mat raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
    if (raw.empty()) fail(ErrorKind::Format, "cannot decode image " + path.string());
    if (raw.depth() != CV_8U) fail(ErrorKind::Format, "only 8-bit images are supported: " + path.string());

    cv::Mat rgb;
    switch (raw.channels()) {
        case 1: cv::cvtColor(raw, rgb, cv::COLOR_GRAY2RGB); break;
        case 3: cv::cvtColor(raw, rgb, cv::COLOR_BGR2RGB); break;
        case 4: cv::cvtColor(raw, rgb, cv::COLOR_BGRA2RGB); break;
        default: fail(ErrorKind::Format, "unsupported channel count in " + path.string());
    }
    if (rgb.rows != target_size || rgb.cols != target_size) {
        cv::Mat resized;
        cv::resize(rgb, resized, cv::Size(static_cast<int>(target_size), static_cast<int>(target_size)), 0, 0,
                   cv::INTER_LINEAR);
        rgb = resized;
    }
    cv::Mat f;
    rgb.convertTo(f, CV_32FC3, 1.0 / 255.0);
    auto hwc = torch::from_blob(f.data, {target_size, target_size, 3}, torch::kFloat32).clone();
    return ImageTensor(hwc.permute({2, 0, 1}).contiguous());
}

void save_png(const ImageTensor& image, const std::filesystem::path& path) {
    if (image.empty()) fail(ErrorKind::InvalidInput, "cannot save an empty image");
    const auto hwc = (image.tensor() * 255.0).round().clamp(0, 255).to(torch::kUInt8).permute({1, 2, 0}).contiguous();
    cv::Mat rgb(static_cast<int>(image.height()), static_cast<int>(image.width()), CV_8UC3, hwc.data_ptr<std::uint8_t>());
    cv::Mat bgr;
    cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    bool ok = false;
    try {
        ok = cv::imwrite(path.string(), bgr);
    } catch (const cv::Exception&) {
        ok = false;
    }
    if (!ok) fail(ErrorKind::Io, "cannot write image " + path.string());
}

ImageTensor hconcat(const std::vector<ImageTensor>& panels) {
    if (panels.empty()) fail(ErrorKind::InvalidInput, "no panels to concatenate");
    std::vector<torch::Tensor> ts;
    for (const auto& p : panels) {
        if (p.height() != panels.front().height() || p.width() != panels.front().width()) {
            fail(ErrorKind::InvalidInput, "panels must share dimensions");
        }
        ts.push_back(p.tensor());
    }
    return ImageTensor(torch::cat(ts, 2));
}

}  // namespace fundus
