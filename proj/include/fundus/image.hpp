#ifndef FUNDUS_IMAGE_HPP
#define FUNDUS_IMAGE_HPP

#include <filesystem>
#include <vector>

#include <torch/torch.h>

namespace fundus {

/// Three-channel image with values in [0,1], stored channel-first
/// ([3, H, W], float32) so batches stack straight into network input.
class ImageTensor {
public:
    ImageTensor() = default;

    /// Validates shape [3, H, W] and range; values are clamped by at most 1e-6.
    explicit ImageTensor(torch::Tensor chw);

    static ImageTensor filled(std::int64_t height, std::int64_t width, float value);

    const torch::Tensor& tensor() const { return data_; }
    std::int64_t height() const { return data_.size(1); }
    std::int64_t width() const { return data_.size(2); }
    bool empty() const { return !data_.defined(); }

private:
    torch::Tensor data_;
};

/// [N, 3, H, W]; all images must share a size.
torch::Tensor stack_images(const std::vector<ImageTensor>& images);

/// Decodes an 8-bit image, bilinear-resizes to target x target, replicates
/// grayscale to three channels.
ImageTensor load_image(const std::filesystem::path& path, std::int64_t target_size);

/// Writes an 8-bit-per-channel PNG (values scaled from [0,1], rounded).
void save_png(const ImageTensor& image, const std::filesystem::path& path);

/// Horizontal strip of equally sized panels.
ImageTensor hconcat(const std::vector<ImageTensor>& panels);

}  // namespace fundus

#endif
