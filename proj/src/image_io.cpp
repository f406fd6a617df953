#include "tsvpr/image_io.hpp"

#include <fstream>
#include <stdexcept>

namespace tsvpr {

void write_pnm(const std::string& path, const Image8& image) {
    if (image.channels != 1 && image.channels != 3) throw std::invalid_argument("write_pnm: channels must be 1 or 3");
    if (image.pixels.size() != image.width * image.height * image.channels) {
        throw std::invalid_argument("write_pnm: pixel buffer size mismatch");
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    out << (image.channels == 3 ? "P6" : "P5") << '\n' << image.width << ' ' << image.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
    if (!out) throw std::runtime_error("write failed on '" + path + "'");
}

namespace {

// Next header token, skipping whitespace and '#' comments.
std::string token(std::istream& in, const std::string& path) {
    std::string t;
    int c;
    while ((c = in.get()) != EOF) {
        if (c == '#') {
            while ((c = in.get()) != EOF && c != '\n') {
            }
            continue;
        }
        if (std::isspace(c)) {
            if (!t.empty()) return t;
            continue;
        }
        t.push_back(static_cast<char>(c));
    }
    if (t.empty()) throw std::runtime_error("'" + path + "': truncated image header");
    return t;
}

std::size_t number(std::istream& in, const std::string& path) {
    const std::string t = token(in, path);
    try {
        return std::stoul(t);
    } catch (const std::exception&) {
        throw std::runtime_error("'" + path + "': bad header field '" + t + "'");
    }
}

}  // namespace

Image8 read_pnm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    const std::string magic = token(in, path);
    Image8 img;
    if (magic == "P6") img.channels = 3;
    else if (magic == "P5") img.channels = 1;
    else throw std::runtime_error("'" + path + "': not a binary PPM/PGM file");
    img.width = number(in, path);
    img.height = number(in, path);
    if (number(in, path) != 255) throw std::runtime_error("'" + path + "': only 8-bit images are supported");
    // token() consumed exactly one whitespace byte after maxval.
    img.pixels.resize(img.width * img.height * img.channels);
    in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
    if (static_cast<std::size_t>(in.gcount()) != img.pixels.size()) throw std::runtime_error("'" + path + "': truncated pixel data");
    return img;
}

Tensor image_to_tensor(const Image8& image) {
    if (image.channels != 3) throw std::invalid_argument("image_to_tensor: expected an RGB image");
    Tensor t({image.height, image.width, 3});
    for (std::size_t i = 0; i < image.pixels.size(); ++i) t[i] = image.pixels[i] / 127.5 - 1.0;
    return t;
}

}  // namespace tsvpr
