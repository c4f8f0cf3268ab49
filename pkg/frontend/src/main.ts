import { mount } from "./controller.js";

const root = document.getElementById("app");
if (!root) throw new Error("missing #app root");
mount(root);
