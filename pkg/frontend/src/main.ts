import { boot } from './ui.js';

const params = new URLSearchParams(window.location.search);
boot(params.get('reviewer') ?? undefined);
