import { App } from "./app.js";

window.addEventListener("DOMContentLoaded", () => {
  new App().init().catch((err) => {
    console.error("init failed", err);
    const bar = document.getElementById("flash");
    if (bar) {
      bar.textContent = `init failed: ${err}`;
      bar.classList.add("visible");
    }
  });
});
