import { HttpApi } from "./api.js";
import { ProofreadApp } from "./ui.js";

const app = new ProofreadApp(document, new HttpApi(""));
void app.start();
