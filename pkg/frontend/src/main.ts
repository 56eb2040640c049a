import { ApiClient } from "./api.js";
import { App } from "./app.js";

const base = window.location.origin;
const app = new App(new ApiClient(base));
void app.mount(document.getElementById("app")!);
