/** Browser capture sources: webcam frames and dropped image files.
 *
 * Downscaling happens here, in the browser; the agent only ever receives
 * finished PPM bytes.
 */
import { rgbaToRgb } from "./ppm.js";
export const CAPTURE_SIZE = 192; // longest edge sent to the agent
export async function openWebcam(video) {
    try {
        const stream = await navigator.mediaDevices.getUserMedia({ video: { width: 640, height: 480 } });
        video.srcObject = stream;
        await video.play();
        return stream;
    }
    catch (err) {
        console.error("webcam unavailable:", err);
        return null;
    }
}
function scaled(width, height) {
    const edge = Math.max(width, height);
    if (edge <= CAPTURE_SIZE)
        return { w: width, h: height };
    const f = CAPTURE_SIZE / edge;
    return { w: Math.max(1, Math.round(width * f)), h: Math.max(1, Math.round(height * f)) };
}
export function grabFrame(video) {
    if (!video.videoWidth || !video.videoHeight)
        return null;
    const { w, h } = scaled(video.videoWidth, video.videoHeight);
    const canvas = document.createElement("canvas");
    canvas.width = w;
    canvas.height = h;
    const ctx = canvas.getContext("2d");
    ctx.drawImage(video, 0, 0, w, h);
    const data = ctx.getImageData(0, 0, w, h);
    return rgbaToRgb(data.data, w, h);
}
export async function decodeImageFile(file) {
    const bitmap = await createImageBitmap(file);
    const { w, h } = scaled(bitmap.width, bitmap.height);
    const canvas = document.createElement("canvas");
    canvas.width = w;
    canvas.height = h;
    const ctx = canvas.getContext("2d");
    ctx.drawImage(bitmap, 0, 0, w, h);
    const data = ctx.getImageData(0, 0, w, h);
    return rgbaToRgb(data.data, w, h);
}
