/** Wire types mirroring the review service REST contract. */
export {};
